import numpy as np
import pytest

from gtprune.graphs import make_batches, synth_motif_dataset
from gtprune.layers import apply_layer_mask, finalize_layer_prune, sample_layer_mask, validation_loss
from gtprune.model import GraphTransformer, ModelConfig, PruneState

NAMES = ["gnn0", "gnn1", "mha0", "ffn0", "mha1", "ffn1"]


def test_q_one_keeps_everything():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert all(sample_layer_mask(NAMES, 1.0, rng).bits.values())


def test_drop_rate_monte_carlo():
    rng = np.random.default_rng(1)
    names = [f"mha{i}" for i in range(10)]
    dropped = np.mean([1 - np.mean(list(sample_layer_mask(names, 0.75, rng).bits.values())) for _ in range(1000)])
    assert abs(dropped - 0.25) < 0.02


def test_first_gnn_never_dropped_and_seeded():
    a = [sample_layer_mask(NAMES, 0.1, np.random.default_rng(3)).bits for _ in range(3)]
    assert a[0] == a[1] == a[2]
    rng = np.random.default_rng(4)
    assert all(sample_layer_mask(NAMES, 0.05, rng).bits["gnn0"] for _ in range(100))


def test_sample_rejects_bad_q():
    with pytest.raises(ValueError):
        sample_layer_mask(NAMES, 0.0, np.random.default_rng(0))


def test_apply_layer_mask_identity():
    h = np.random.default_rng(0).normal(size=(3, 4))
    assert apply_layer_mask(h, 0, lambda x: x * 2) is h
    assert np.array_equal(apply_layer_mask(h, 1, lambda x: x * 2), h * 2)


def test_bypass_composition_equals_shorter_stack():
    cfg = ModelConfig(in_dim=8, hidden_dim=8, num_heads=2, ffn_dim=8, num_gnn_layers=1, num_transformer_layers=4)
    model = GraphTransformer(cfg, seed=5)
    (batch,) = make_batches(synth_motif_dataset(6, seed=2), 6)
    bits = {s: 1 for s in cfg.sublayer_names()}
    bits.update({"mha1": 0, "ffn1": 0, "mha3": 0, "ffn3": 0})
    masked = model.forward(batch, PruneState(layer_mask=bits)).data

    short_cfg = ModelConfig(in_dim=8, hidden_dim=8, num_heads=2, ffn_dim=8, num_gnn_layers=1, num_transformer_layers=2)
    rename = {"block.0.": "block.0.", "block.2.": "block.1."}
    params = {}
    for k, v in model.params.items():
        if not k.startswith("block."):
            params[k] = v
        for old, new in rename.items():
            if k.startswith(old):
                params[new + k[len(old):]] = v
    short = GraphTransformer(short_cfg, params).forward(batch).data
    assert np.array_equal(masked, short)


@pytest.fixture(scope="module")
def tiny():
    cfg = ModelConfig(in_dim=8, hidden_dim=8, num_heads=2, ffn_dim=8, num_gnn_layers=2, num_transformer_layers=3)
    batches = make_batches(synth_motif_dataset(30, seed=1), 16)
    return cfg, batches


def _loss_without(model, batches, cfg, drop):
    return validation_loss(model, batches, PruneState(layer_mask={n: int(n not in drop) for n in cfg.sublayer_names()}))


def test_finalize_target_zero_and_count(tiny):
    cfg, batches = tiny
    model = GraphTransformer(cfg, seed=0)
    assert finalize_layer_prune(model, batches, 0.0).dropped == []
    # 7 prunable sublayers (gnn0 excluded) at 50% -> ceil(3.5) = 4
    m = finalize_layer_prune(model, batches, 0.5)
    assert len(m.dropped) == 4 and m.bits["gnn0"] == 1 and m.mode == "fixed"


@pytest.mark.parametrize("seed", range(8))
def test_single_drop_matches_exhaustive_search(tiny, seed):
    cfg, batches = tiny
    model = GraphTransformer(cfg, seed=seed)
    got = finalize_layer_prune(model, batches, 0.1).dropped
    losses = {c: _loss_without(model, batches, cfg, {c}) for c in cfg.prunable_sublayers()}
    best = min(losses.values())
    # ties go to the deeper sublayer
    expected = [c for c in cfg.prunable_sublayers() if losses[c] == best][-1]
    assert got == [expected]


@pytest.mark.parametrize("seed", range(4))
def test_greedy_steps_are_locally_optimal(tiny, seed):
    cfg, batches = tiny
    model = GraphTransformer(cfg, seed=seed)
    result = finalize_layer_prune(model, batches, 0.4)
    dropped: set[str] = set()
    for name in result.history:
        options = [c for c in cfg.prunable_sublayers() if c not in dropped]
        best = min(_loss_without(model, batches, cfg, dropped | {c}) for c in options)
        assert _loss_without(model, batches, cfg, dropped | {name}) == best
        dropped.add(name)
