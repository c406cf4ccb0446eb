import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gtprune.weights import (
    PruneSchedule,
    SparsityLog,
    apply_weight_masks,
    magnitude_prune,
    realized_sparsity,
    regrow_weights,
    schedule_sparsity,
)


def test_schedule_endpoints_and_midpoint():
    s = PruneSchedule(0.8, 0.0, start_epoch=4, steps=5, interval=2)
    assert schedule_sparsity(4, s) == 0.0
    assert schedule_sparsity(14, s) == 0.8
    assert schedule_sparsity(9, s) == pytest.approx(0.7, abs=1e-15)
    assert schedule_sparsity(0, s) == 0.0 and schedule_sparsity(99, s) == 0.8


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.49), st.integers(0, 10), st.integers(1, 10), st.integers(1, 5))
def test_schedule_monotone(p_i, extra, t0, m, dt):
    s = PruneSchedule(p_i + extra, p_i, t0, m, dt)
    grid = np.linspace(t0 - 2, t0 + m * dt + 2, 200)
    vals = [schedule_sparsity(t, s) for t in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        PruneSchedule(0.3, 0.5)
    with pytest.raises(ValueError):
        PruneSchedule(0.5, steps=0)


def test_magnitude_prune_examples():
    w = np.array([0.1, 0.5, 0.3])
    ones = np.ones(3)
    assert np.array_equal(magnitude_prune(w, ones, 0.0), ones)
    assert magnitude_prune(w, ones, 0.3).tolist() == [0, 1, 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_magnitude_prune_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(8, 8))
    w.flat[rng.integers(0, 64, 5)] = 0.25  # force some ties
    mask = magnitude_prune(w, np.ones_like(w), 0.5)
    order = sorted(range(64), key=lambda i: (abs(w.flat[i]), i))
    assert set(np.flatnonzero(mask.ravel() == 0)) == set(order[:32])


def test_prune_keeps_masked_entries_masked():
    w = np.array([5.0, 4.0, 0.1, 3.0])
    mask = np.array([0.0, 1.0, 1.0, 1.0])
    out = magnitude_prune(w, mask, 0.5)
    assert out.tolist() == [0, 1, 0, 1]


def test_regrow_zero_fraction_and_zero_gradients():
    w = np.arange(1.0, 9.0)
    mask = magnitude_prune(w, np.ones(8), 0.5)
    assert np.array_equal(regrow_weights(w, np.ones(8), mask, 0.0), mask)
    out = regrow_weights(w, np.zeros(8), mask, 0.5)
    assert out.sum() == mask.sum()
    # ties revive the lowest flat indices among masked entries
    assert out[0] == 1 and out[1] == 1


def test_regrow_picks_largest_gradients():
    w = np.array([0.1, 0.2, 0.3, 0.4, 5.0, 6.0, 7.0, 8.0])
    mask = np.array([0, 0, 0, 0, 1, 1, 1, 1.0])
    grads = np.array([0.0, 9.0, 1.0, 0.0, 0, 0, 0, 0])
    out = regrow_weights(w, grads, mask, 0.25)
    assert out.tolist() == [0, 1, 0, 0, 0, 1, 1, 1]


def test_simulated_schedule_tracks_target():
    rng = np.random.default_rng(0)
    sched = PruneSchedule(0.9, 0.0, start_epoch=2, steps=20, interval=1, regrow_fraction=0.2)
    w = {"a": rng.normal(size=(7, 9)), "b": rng.normal(size=(16,))}
    masks = {k: np.ones_like(v) for k, v in w.items()}
    log = SparsityLog()
    for t in range(0, 25):
        if not sched.is_step(t):
            continue
        p = schedule_sparsity(t, sched)
        for k in w:
            masks[k] = magnitude_prune(w[k], masks[k], p)
            masks[k] = regrow_weights(w[k], rng.normal(size=w[k].shape), masks[k], sched.regrow_fraction)
            assert abs((1 - masks[k].mean()) - p) <= 1.0 / w[k].size + 1e-12
            w[k] = w[k] + 0.01 * rng.normal(size=w[k].shape)
        log.add(t, p, masks)
    assert log.rows[-1]["scheduled"] == 0.9


def test_apply_masks():
    params = {"w": np.array([[1.0, 2.0]]), "ln": np.array([3.0])}
    out = apply_weight_masks(params, {"w": np.array([[0.0, 1.0]])})
    assert out["w"].tolist() == [[0.0, 2.0]] and out["ln"] is params["ln"]
    assert apply_weight_masks(params, {"w": np.ones((1, 2))})["w"].tolist() == [[1.0, 2.0]]
    with pytest.raises(ValueError):
        apply_weight_masks(params, {"w": np.ones(2)})


def test_realized_sparsity_and_log(tmp_path):
    masks = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 0.0, 1.0, 1.0])}
    per, total = realized_sparsity(masks)
    assert per == {"a": 0.5, "b": 0.5} and total == 0.5
    log = SparsityLog()
    log.add(3, 0.5, masks)
    log.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "epoch,scheduled,global,a,b"
