"""Pure-numpy conv2d kernels (im2col / col2im). Fallback backend."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _cols(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    cin = xp.shape[0]
    s0, s1, s2 = xp.strides
    view = as_strided(xp, (cin, k, k, ho, wo), (s0, s1, s2, s1 * stride, s2 * stride))
    return view.reshape(cin * k * k, ho * wo)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = _cols(xp, k, stride, ho, wo)
    return (w.reshape(cout, -1) @ cols).reshape(cout, ho, wo)


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                    gout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    _, ho, wo = gout.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    cols = _cols(xp, k, stride, ho, wo)
    gmat = gout.reshape(cout, -1)

    gw = (gmat @ cols.T).reshape(w.shape)

    gcols = (w.reshape(cout, -1).T @ gmat).reshape(cin, k, k, ho, wo)
    gxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
    gx = gxp[:, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(gx), gw
