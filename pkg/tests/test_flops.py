import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtprune.flops import count_flops, count_params, export_params, param_shapes
from gtprune.model import ModelConfig, PruneState, init_params, is_prunable_weight, sublayer_of

from oracles import closed_form_flops

CFG = ModelConfig(in_dim=8, hidden_dim=64, num_heads=4, ffn_dim=128, num_gnn_layers=2, num_transformer_layers=4)


def test_dense_matches_closed_form():
    for n, nnz in [(30, 58), (1, 0), (17, 40)]:
        rep = count_flops(CFG, n, nnz)
        assert rep.total_flops == closed_form_flops(n, nnz)
        assert rep.total_flops == rep.gnn_flops + rep.mha_flops + rep.ffn_flops + rep.scorer_flops + rep.classifier_flops


def test_token_pruning_matches_closed_form():
    cfg = ModelConfig(in_dim=8, hidden_dim=128, num_heads=4, ffn_dim=128, token_stages=(1,))
    rep = count_flops(cfg, 30, 58, PruneState(), kept={1: 15})
    assert rep.total_flops == closed_form_flops(30, 58, d=128, kept=15, kept_after=1)


def test_attention_term_falls_fourfold():
    full = count_flops(CFG, 30, 58).attention_score_flops
    half = count_flops(CFG, 15, 20).attention_score_flops
    assert full == 4 * half


def test_zero_transformer_layers():
    cfg = ModelConfig(in_dim=8, hidden_dim=64, num_heads=4, ffn_dim=128, num_transformer_layers=0)
    assert count_flops(cfg, 10, 12).mha_flops == 0


def test_masked_heads_and_dropped_sublayers_cost_nothing():
    state = PruneState(head_mask=np.zeros((4, 4), dtype=int), layer_mask={"ffn0": 0, "ffn1": 0, "ffn2": 0, "ffn3": 0})
    rep = count_flops(CFG, 20, 30, state)
    assert rep.mha_flops == 0 and rep.ffn_flops == 0


def _random_state(rng, heads_off, weight_p):
    params = init_params(CFG)
    head = np.ones((4, 4), dtype=int)
    head.flat[:heads_off] = 0
    masks = {k: (rng.random(p.shape) >= weight_p).astype(float) for k, p in params.items() if is_prunable_weight(k)}
    return PruneState(head_mask=head, weight_masks=masks)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), st.floats(0, 0.9), st.integers(0, 10_000))
def test_monotone_in_sparsity(h1, h2, p, seed):
    lo, hi = sorted((h1, h2))
    rng = np.random.default_rng(seed)
    a = _random_state(rng, lo, 0.0)
    b = _random_state(rng, hi, 0.0)
    b.weight_masks = {k: (rng.random(m.shape) >= p).astype(float) for k, m in b.weight_masks.items()}
    ra, rb = count_flops(CFG, 12, 20, a), count_flops(CFG, 12, 20, b)
    for field in ("gnn_flops", "mha_flops", "ffn_flops", "classifier_flops"):
        assert getattr(rb, field) <= getattr(ra, field)
    assert count_params(CFG, b) <= count_params(CFG, a)


def test_params_equal_tensor_sizes():
    assert count_params(CFG) == sum(int(np.prod(s)) for s in param_shapes(CFG).values())


def test_layer_drop_removes_exact_tensor_sizes():
    cfg = ModelConfig(in_dim=8, hidden_dim=32, num_heads=4, ffn_dim=64, num_gnn_layers=4, num_transformer_layers=4)
    shapes = param_shapes(cfg)
    dropped = ["gnn2", "mha0", "ffn1", "mha3", "ffn3"]
    state = PruneState(layer_mask={s: int(s not in dropped) for s in cfg.sublayer_names()})
    expected = sum(int(np.prod(s)) for k, s in shapes.items() if sublayer_of(k) in dropped)
    assert count_params(cfg) - count_params(cfg, state) == expected


def test_head_mask_export_slices_columns():
    params = {k: v.data for k, v in init_params(CFG).items()}
    state = PruneState(head_mask=np.array([[1, 0, 1, 0]] + [[1, 1, 1, 1]] * 3))
    out = export_params(CFG, params, state)
    assert out["block.0.attn.wq"].shape == (64, 32)
    assert out["block.0.attn.wo"].shape == (32, 64)
    np.testing.assert_array_equal(out["block.0.attn.wq"][:, 16:], params["block.0.attn.wq"][:, 32:48])


def test_weight_density_scales_matmul_count():
    params = init_params(CFG)
    masks = {k: np.ones(p.shape) for k, p in params.items() if is_prunable_weight(k)}
    masks["block.0.ffn.w1"][:, :64] = 0.0
    rep = count_flops(CFG, 10, 0, PruneState(weight_masks=masks))
    dense = count_flops(CFG, 10, 0)
    assert dense.ffn_flops - rep.ffn_flops == pytest.approx(2 * 10 * 64 * 128 * 0.5)
