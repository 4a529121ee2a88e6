import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from memefusion.features import region_location
from memefusion.model import PRESETS, FusionClassifier, ModelConfig, build_model
from memefusion.vocab_graph import VocabularyGraph, normalize
from model_helpers import gradient_check, tiny_batch, tiny_config, tiny_examples, tiny_model
from oracles import gelu, layer_norm, softmax


def _set(param, values):
    with torch.no_grad():
        param.copy_(torch.as_tensor(values, dtype=param.dtype))


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        tiny_config("vgcn", d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        tiny_config("sentiment", sentiment_dim=0)
    with pytest.raises(ValueError):
        tiny_config("vgcn", graph_tokens=-1)
    with pytest.raises(ValueError):
        tiny_config("other")
    cfg = tiny_config("vgcn")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_presets_have_reference_shapes():
    assert PRESETS["base-like"]["d_model"] == 768 and PRESETS["base-like"]["n_heads"] == 12
    assert PRESETS["large-like"]["d_model"] == 1024
    cfg = ModelConfig.from_preset("toy", variant="vgcn", vocab_size=10, num_object_classes=2, region_dim=3)
    assert (cfg.d_model, cfg.n_layers, cfg.n_heads) == (64, 2, 4)
    for name in PRESETS:
        c = ModelConfig.from_preset(name, variant="vgcn", vocab_size=10, num_object_classes=2, region_dim=3)
        assert c.d_model % c.n_heads == 0
    with pytest.raises(ValueError):
        ModelConfig.from_preset("huge", variant="vgcn", vocab_size=10, num_object_classes=2, region_dim=3)


def test_embed_text_by_hand():
    model = FusionClassifier(tiny_config("sentiment", d_model=4, n_heads=1, vocab_size=6, max_len=5)).double()
    model.reset_parameters(0)
    tok = np.arange(24, dtype=float).reshape(6, 4) / 10
    pos = np.array([[0.0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    seg = np.array([[0.5, -0.5, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
    _set(model.token_embedding.weight, tok)
    _set(model.position_embedding.weight, pos)
    _set(model.segment_embedding.weight, seg)
    ids = torch.tensor([[2, 5, 5]])
    out = model.embed_text(ids)[0].detach().numpy()
    expected = layer_norm(tok[[2, 5, 5]] + pos[:3] + seg[0])
    np.testing.assert_allclose(out, expected, atol=1e-12)
    # first row by hand: (1.3, 0.4, 1.0, 1.1) has mean 0.95 and variance 0.1125
    x = np.array([1.3, 0.4, 1.0, 1.1])
    np.testing.assert_allclose(out[0], (x - 0.95) / math.sqrt(0.1125 + 1e-5), atol=1e-12)
    # the same token at two positions differs only through the position rows
    assert not np.allclose(out[1], out[2])
    with pytest.raises(IndexError):
        model.embed_text(torch.tensor([[6]]))


def test_location_vector():
    np.testing.assert_array_equal(region_location((0, 0, 100, 100), (100, 100)), [0, 0, 1, 1, 1, 1, 1])
    np.testing.assert_allclose(region_location((10, 20, 30, 60), (100, 200)), [0.1, 0.1, 0.3, 0.3, 0.2, 0.2, 0.04])
    with pytest.raises(ValueError):
        region_location((0, 0, 1, 1), (0, 10))


def test_embed_regions_by_hand():
    model = FusionClassifier(tiny_config("sentiment", d_model=4, n_heads=1, region_dim=3)).double()
    model.reset_parameters(0)
    w_r = np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    w_l = np.zeros((4, 7))
    w_l[0, 6] = 2.0
    _set(model.region_proj.weight, w_r)
    _set(model.region_proj.bias, [0.1, 0, 0, 0])
    _set(model.location_proj.weight, w_l)
    _set(model.location_proj.bias, np.zeros(4))
    seg = np.zeros((3, 4))
    seg[1] = [0, 0, 0, 1]
    _set(model.segment_embedding.weight, seg)
    feat = np.array([[1.0, 2.0, 3.0]])
    loc = region_location((0, 0, 50, 50), (100, 100))[None]
    out = model.embed_regions(torch.tensor(feat)[None], torch.tensor(loc)[None])[0, 0].detach().numpy()
    raw = np.array([1.0 + 0.1 + 2 * 0.25, 2.0, 3.0, 6.0 + 1.0])
    np.testing.assert_allclose(out, layer_norm(raw), atol=1e-12)


def test_model_runs_without_regions():
    model = tiny_model("vgcn")
    ex = [replace(e, region_features=np.zeros((0, 3)), region_locations=np.zeros((0, 7))) for e in tiny_examples("vgcn", 6)]
    out = model(tiny_batch(model, ex))
    assert out["a"].shape == (6, 1) and out["b"].shape == (6, 5)


def _two_node_model():
    graph = VocabularyGraph(1, 1, (0, 1), ((0, 1, 1.0),), 0.3)
    cfg = ModelConfig(variant="vgcn", vocab_size=1, num_object_classes=1, region_dim=1, d_model=2, n_heads=1,
                      n_layers=1, d_ff=2, max_len=4, graph_tokens=1, gcn_hidden=2, dropout=0.0)
    model = build_model(cfg, normalize(graph), dtype=torch.float64)
    _set(model.token_embedding.weight, [[1.0, 2.0]])
    _set(model.object_embedding.weight, [[3.0, -1.0]])
    _set(model.gcn_w1, [[1.0, -1.0], [0.0, 2.0]])
    _set(model.gcn_w2, [[1.0], [1.0]])
    return model


def test_graph_columns_by_hand():
    model = _two_node_model()
    # v = (1, 2); M = [[1, 6], [2, -2]]; A_hat = 0.5 * ones; A_hat W1 = 0.5 * ones
    # M A_hat W1 = [[3.5, 3.5], [0, 0]]; relu; times W2 = (7, 0)
    out = model.graph_columns(torch.tensor([[1.0, 2.0]]))
    np.testing.assert_allclose(out.detach().numpy(), [[[7.0, 0.0]]], atol=1e-12)
    zero = model.graph_columns(torch.zeros(1, 2))
    assert torch.count_nonzero(zero) == 0


def test_graph_column_oracle_and_linearity():
    model = tiny_model("vgcn")
    counts = tiny_batch(model, tiny_examples("vgcn", 4)).node_counts
    e = model.node_embeddings().detach().numpy()
    a_hat = model._adjacency.to_dense().numpy()
    w1 = model.gcn_w1.detach().numpy()
    w2 = model.gcn_w2.detach().numpy()
    got = model.graph_columns(counts).detach().numpy()
    for b, v in enumerate(counts.numpy()):
        m = (v[:, None] * e).T  # (d, |V|), column k = v_k E[k]
        g = np.maximum(m @ a_hat @ w1, 0) @ w2
        np.testing.assert_allclose(got[b], g.T, atol=1e-10)

    # linear in W2
    base = model.gcn_w2.detach().clone()
    other = torch.randn(base.shape, dtype=base.dtype, generator=torch.Generator().manual_seed(1))
    outs = []
    for w in (base, other, base + other):
        _set(model.gcn_w2, w)
        outs.append(model.graph_columns(counts).detach())
    torch.testing.assert_close(outs[2], outs[0] + outs[1], atol=1e-10, rtol=0)


def test_graph_columns_superpose_where_relu_is_inactive():
    model = tiny_model("vgcn")
    with torch.no_grad():
        model.token_embedding.weight.abs_()
        model.object_embedding.weight.abs_()
    counts = tiny_batch(model, tiny_examples("vgcn", 4)).node_counts
    gen = torch.Generator().manual_seed(3)
    w1a = torch.rand(model.gcn_w1.shape, dtype=torch.float64, generator=gen)
    w1b = torch.rand(model.gcn_w1.shape, dtype=torch.float64, generator=gen)
    outs = []
    for w in (w1a, w1b, w1a + w1b, 2.5 * w1a):
        _set(model.gcn_w1, w)
        outs.append(model.graph_columns(counts).detach())
    torch.testing.assert_close(outs[2], outs[0] + outs[1], atol=1e-10, rtol=0)
    torch.testing.assert_close(outs[3], 2.5 * outs[0], atol=1e-10, rtol=0)


def test_zero_graph_tokens_degenerates_to_fusion_encoder():
    model = tiny_model("vgcn", graph_tokens=0)
    batch = tiny_batch(model, tiny_examples("vgcn", 2))
    x, mask = model.fuse(batch)
    assert x.shape[1] == batch.token_ids.shape[1] + batch.region_features.shape[1]


def test_adjacency_shape_checked():
    model = tiny_model("vgcn")
    with pytest.raises(ValueError, match="shape"):
        model.set_adjacency(sp.identity(3, format="csr"))
    with pytest.raises(ValueError):
        build_model(tiny_config("vgcn"), None)


def _numpy_encoder(model, x, mask):
    """Pre-LN block(s) plus final LN and tanh pooler, written out in numpy."""
    def lin(mod, v):
        return v @ mod.weight.detach().numpy().T + mod.bias.detach().numpy()

    def ln(mod, v):
        return layer_norm(v) * mod.weight.detach().numpy() + mod.bias.detach().numpy()

    n_heads = model.config.n_heads
    for layer in model.layers:
        h = ln(layer.attn_norm, x)
        q, k, v = lin(layer.attn.query, h), lin(layer.attn.key, h), lin(layer.attn.value, h)
        dh = q.shape[-1] // n_heads
        ctx = np.zeros_like(q)
        for head in range(n_heads):
            sl = slice(head * dh, (head + 1) * dh)
            scores = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
            scores[:, ~mask] = -np.inf
            ctx[:, sl] = softmax(scores) @ v[:, sl]
        x = x + lin(layer.attn.out, ctx)
        h = ln(layer.ff_norm, x)
        x = x + lin(layer.ff[2], gelu(lin(layer.ff[0], h)))
    hidden = ln(model.final_norm, x)
    return np.tanh(lin(model.pooler, hidden[0]))


def test_encode_one_layer_one_head_by_hand():
    model = tiny_model("sentiment", d_model=2, n_heads=1, d_ff=3, n_layers=1, seed=4)
    x = torch.tensor([[[0.3, -1.2], [1.0, 0.5], [2.0, 2.0]]], dtype=torch.float64)
    mask = torch.tensor([[True, True, False]])
    _, pooled = model.encode(x, mask)
    np.testing.assert_allclose(pooled[0].detach().numpy(), _numpy_encoder(model, x[0].numpy(), mask[0].numpy()), atol=1e-12)


def test_encode_matches_numpy_on_tiny_model():
    model = tiny_model("vgcn", seed=2)
    batch = tiny_batch(model, tiny_examples("vgcn", 3))
    x, mask = model.fuse(batch)
    _, pooled = model.encode(x, mask)
    for b in range(3):
        want = _numpy_encoder(model, x[b].detach().numpy(), mask[b].numpy())
        np.testing.assert_allclose(pooled[b].detach().numpy(), want, atol=1e-10)


def test_attention_rows_sum_to_one_and_skip_masked_keys():
    model = tiny_model("vgcn")
    batch = tiny_batch(model, tiny_examples("vgcn", 4))
    x, mask = model.fuse(batch)
    _, _, attention = model.encode(x, mask, return_attention=True)
    for weights in attention:
        torch.testing.assert_close(weights.sum(-1), torch.ones_like(weights.sum(-1)), atol=1e-6, rtol=0)
        assert torch.all(weights.masked_select(~mask[:, None, None, :].expand_as(weights)) == 0)


def test_pad_positions_never_reach_pooled_output():
    model = tiny_model("sentiment")
    batch = tiny_batch(model, tiny_examples("sentiment", 4))
    _, pooled = model.encode(*model.fuse(batch))
    with torch.no_grad():
        model.token_embedding.weight[0] = torch.randn(8, dtype=torch.float64) * 10
        batch.region_features[~batch.region_mask] = 99.0
    _, perturbed = model.encode(*model.fuse(batch))
    torch.testing.assert_close(perturbed, pooled, atol=1e-6, rtol=0)


def test_permuting_pad_positions_leaves_pooled_unchanged():
    model = tiny_model("sentiment")
    x = torch.randn(1, 6, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    mask = torch.tensor([[True, True, True, False, False, True]])
    swapped = x.clone()
    swapped[0, [3, 4]] = x[0, [4, 3]] + 5.0
    torch.testing.assert_close(model.encode(swapped, mask)[1], model.encode(x, mask)[1], atol=1e-6, rtol=0)


def test_classify_contract():
    model = tiny_model("sentiment")
    for head in (model.head_a, model.head_b):
        assert head.in_features == 8 + 4
        with torch.no_grad():
            head.weight.zero_()
            head.bias.zero_()
    batch = tiny_batch(model, tiny_examples("sentiment", 2))
    probs = model.predict_proba(batch)
    assert torch.all(probs["a"] == 0.5) and torch.all(probs["b"] == 0.5)
    with pytest.raises(ValueError):
        model.classify(torch.zeros(1, 8))
    with pytest.raises(ValueError):
        model.classify(torch.zeros(1, 8), torch.zeros(1, 3))
    assert tiny_model("vgcn").head_b.in_features == 8


def test_classify_by_hand():
    model = tiny_model("sentiment", d_model=2, n_heads=1, sentiment_dim=1)
    _set(model.head_a.weight, [[1.0, -1.0, 2.0]])
    _set(model.head_a.bias, [0.5])
    _set(model.head_b.weight, np.arange(15, dtype=float).reshape(5, 3) / 10)
    _set(model.head_b.bias, np.zeros(5))
    pooled = torch.tensor([[0.2, 0.4]], dtype=torch.float64)
    sent = torch.tensor([[3.0]], dtype=torch.float64)
    out = model.classify(pooled, sent)
    assert out["a"].item() == pytest.approx(0.2 - 0.4 + 6.0 + 0.5)
    want_b = [0.1 * (3 * k) * 0.2 + 0.1 * (3 * k + 1) * 0.4 + 0.1 * (3 * k + 2) * 3.0 for k in range(5)]
    np.testing.assert_allclose(out["b"][0].detach().numpy(), want_b, atol=1e-12)


@pytest.mark.parametrize("variant", ["sentiment", "vgcn"])
def test_batch_of_one_matches_batched_row(variant):
    model = tiny_model(variant, dtype=torch.float32)
    examples = tiny_examples(variant, 5)
    full = model(tiny_batch(model, examples))
    for k, e in enumerate(examples):
        single = model(tiny_batch(model, [e]))
        torch.testing.assert_close(single["a"][0], full["a"][k], atol=1e-6, rtol=0)
        torch.testing.assert_close(single["b"][0], full["b"][k], atol=1e-6, rtol=0)


@pytest.mark.parametrize("variant", ["sentiment", "vgcn"])
def test_forward_is_deterministic_and_finite(variant):
    model = tiny_model(variant)
    model.eval()
    batch = tiny_batch(model, tiny_examples(variant, 4))
    a, b = model(batch), model(batch)
    assert torch.equal(a["b"], b["b"]) and torch.isfinite(a["b"]).all()
    probs = model.predict_proba(batch)
    assert ((0 <= probs["b"]) & (probs["b"] <= 1)).all()


def test_init_is_seeded_and_structured():
    a, b, c = tiny_model("vgcn", seed=1), tiny_model("vgcn", seed=1), tiny_model("vgcn", seed=2)
    for (name, p), q, r in zip(a.named_parameters(), b.parameters(), c.parameters()):
        assert torch.equal(p, q)
        if name.endswith("bias"):
            assert torch.count_nonzero(p) == 0
    assert any(not torch.equal(p, r) for p, r in zip(a.parameters(), c.parameters()))
    assert torch.all(a.text_norm.weight == 1)
    std = a.config.init_std
    assert a.token_embedding.weight.abs().max() <= 2 * std


def test_dropout_only_acts_in_training_mode():
    model = tiny_model("vgcn", dropout=0.5)
    batch = tiny_batch(model, tiny_examples("vgcn", 3))
    model.eval()
    torch.testing.assert_close(model(batch)["b"], model(batch)["b"])
    model.train()
    torch.manual_seed(0)
    first = model(batch)["b"]
    assert not torch.equal(first, model(batch)["b"])


@pytest.mark.parametrize("variant", ["sentiment", "vgcn"])
def test_gradient_check(variant):
    model = tiny_model(variant)
    errors = gradient_check(model, tiny_batch(model, tiny_examples(variant, 4)))
    rel = np.concatenate(list(errors.values()))
    assert (rel < 1e-3).mean() >= 0.99
    assert rel.max() < 1e-2
    if variant == "vgcn":
        assert {"gcn_w1", "gcn_w2", "object_embedding.weight"} <= set(errors)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_parameters_stay_finite(seed):
    model = tiny_model("vgcn", seed=seed, dtype=torch.float32)
    assert all(torch.isfinite(p).all() for p in model.parameters())
