import numpy as np
import pytest

from sagvit import SagVit
from sagvit.backbone import ConfigError, Image
from sagvit.model import ModelConfig
from sagvit.tensor import Tensor, grad_check, matmul, no_grad
from sagvit.training import cross_entropy
from sagvit.transformer import classify, global_mean_pool

from conftest import random_image, tiny_model, tiny_model_config


def test_forward_probs_sum_to_one(rng):
    m = tiny_model()
    for _ in range(3):
        r = m.forward(random_image(rng))
        assert abs(r.probs.data.sum() - 1.0) < 1e-9
        assert np.all(r.probs.data > 0)


def test_forward_deterministic(rng):
    img = random_image(rng)
    outs = [SagVit(tiny_model_config(), seed=5).forward(img).probs.data for _ in range(2)]
    assert np.array_equal(outs[0], outs[1])


@pytest.mark.parametrize("ablation", ["full", "no_transformer", "no_gat", "no_backbone"])
@pytest.mark.parametrize("mode", ["moore", "knn"])
def test_full_pipeline_gradients(ablation, mode, rng):
    m = tiny_model(ablation=ablation, mode=mode)
    img = random_image(rng)
    report = grad_check(lambda: cross_entropy(m.forward(img).logits, [1]),
                        m.parameters(), step=1e-5)
    assert max(report.values()) <= 1e-4, f"{ablation}/{mode}: {report}"


def test_ablation_prunes_parameters():
    names_full = {p.name for p in tiny_model("full").parameters()}
    assert any(n.startswith("gat.") for n in names_full)
    assert any(n.startswith("transformer.") for n in names_full)
    assert any(n.startswith("backbone.") for n in names_full)

    assert not any(n.startswith("gat.")
                   for n in (p.name for p in tiny_model("no_gat").parameters()))
    assert not any(n.startswith("transformer.")
                   for n in (p.name for p in tiny_model("no_transformer").parameters()))
    assert not any(n.startswith("backbone.")
                   for n in (p.name for p in tiny_model("no_backbone").parameters()))


def test_dimension_chain_validation():
    cfg = tiny_model_config()
    cfg.gat.d_in = 999
    with pytest.raises(ConfigError, match="d_in"):
        SagVit(cfg)


def test_knn_range_validation():
    cfg = tiny_model_config(mode="knn")
    cfg.neighborhood = type(cfg.neighborhood)(mode="knn", k=500)
    with pytest.raises(ConfigError):
        SagVit(cfg)


def test_state_dict_roundtrip(rng):
    m1 = tiny_model(seed=1)
    m2 = tiny_model(seed=2)
    img = random_image(rng)
    assert not np.array_equal(m1.forward(img).probs.data, m2.forward(img).probs.data)
    m2.load_state_dict(m1.state_dict())
    assert np.array_equal(m1.forward(img).probs.data, m2.forward(img).probs.data)


def test_state_dict_shape_mismatch(rng):
    m = tiny_model()
    state = m.state_dict()
    key = next(iter(state))
    state[key] = np.zeros((1, 1))
    with pytest.raises(ConfigError, match="shape mismatch"):
        m.load_state_dict(state)


def test_pool_first_stage_order(rng):
    cfg = tiny_model_config()
    cfg.pool_first = True
    m = SagVit(cfg, seed=0)
    r = m.forward(random_image(rng))
    assert abs(r.probs.data.sum() - 1.0) < 1e-9


def test_learned_positional_encoding(rng):
    m = tiny_model(pos_encoding="learned")
    assert any(p.name == "pos.table" for p in m.parameters())
    r = m.forward(random_image(rng))
    assert abs(r.probs.data.sum() - 1.0) < 1e-9


def _headless_forward(m, graph, feats):
    """GAT -> bridge -> encoder -> pool -> classify, bypassing the backbone."""
    x = m.gat(graph, feats)
    if m.bridge is not None:
        x = matmul(x, m.bridge.T)
    for blk in m.blocks:
        x = blk(x)
    return classify(global_mean_pool(x), m.head).data


def test_end_to_end_permutation_invariance():
    from sagvit.graph import PatchGraph
    from sagvit.patching import PatchMatrix
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = tiny_model(pos_encoding="none", seed=seed + 50)
        img = random_image(rng)
        with no_grad():
            r = m.forward(img)
        g, pm = r.graph, r.patches
        base = _headless_forward(m, g, pm.features)

        perm = rng.permutation(g.num_nodes)
        inv = np.argsort(perm)
        pm2 = PatchMatrix(features=Tensor(pm.features.data[perm]), grid=pm.grid)
        g2 = PatchGraph(num_nodes=g.num_nodes,
                        edges=[(int(inv[u]), int(inv[v])) for u, v in g.edges],
                        weights=g.weights.copy(), node_features=pm2,
                        sigma_sq=g.sigma_sq)
        permuted = _headless_forward(m, g2, pm2.features)
        assert np.max(np.abs(base - permuted)) < 1e-9, f"seed {seed}"


def test_diagnostics_payload(rng):
    m = tiny_model()
    with no_grad():
        r = m.forward(random_image(rng), diagnostics=True)
    assert r.graph is not None
    assert r.tokens is not None and r.tokens.shape[1] == m.cfg.transformer.d_model
    assert r.pooled.shape == (m.cfg.transformer.d_model,)
    assert r.alphas is not None
    src = r.graph.src()
    for per_layer in r.alphas:
        for alpha in per_layer:
            sums = np.zeros(r.graph.num_nodes)
            np.add.at(sums, src, alpha)
            assert np.max(np.abs(sums - 1.0)) < 1e-6
