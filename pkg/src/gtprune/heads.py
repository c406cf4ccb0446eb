"""Attention-head importance, global head pruning and gradient regrowth."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from ._util import ceil_count
from .graphs import Batch
from .model import GraphTransformer, PruneState, Recorder


@dataclass
class HeadScoreBoard:
    scores: np.ndarray  # (L, N_h) sensitivity |<Z, dL/dZ>|, mean over graphs
    grads: np.ndarray | None = None  # (L, N_h) mean l1 norm of dL/dZ
    num_graphs: int = 0

    def to_csv(self, path: str | Path, mask: np.ndarray | None = None, step: int | None = None) -> None:
        L, H = self.scores.shape
        new = not Path(path).exists()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["step", "layer", "head", "score", "grad_l1", "active"])
            for l in range(L):
                for h in range(H):
                    g = "" if self.grads is None else repr(float(self.grads[l, h]))
                    active = 1 if mask is None else int(mask[l, h])
                    w.writerow(["" if step is None else step, l, h, repr(float(self.scores[l, h])), g, active])


def _per_graph_head_stats(
    model: GraphTransformer,
    batches: Sequence[Batch],
    state: PruneState,
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    cfg = model.config
    L, H = cfg.num_transformer_layers, cfg.num_heads
    sens: dict[int, np.ndarray] = {}
    l1: dict[int, np.ndarray] = {}
    for batch in batches:
        rec = Recorder(head_outputs=True)
        logits = model.forward(batch, state, training=False, record=rec)
        # summed loss gives each graph its own (unscaled) gradient
        T.cross_entropy(logits, batch.labels, reduction="sum").backward()
        s = np.zeros((batch.size, L, H))
        g1 = np.zeros((batch.size, L, H))
        for l, z in rec.heads.items():
            grad = z.grad if z.grad is not None else np.zeros_like(z.data)
            s[:, l, :] = np.abs((z.data * grad).sum(axis=(2, 3)))
            g1[:, l, :] = np.abs(grad).sum(axis=(2, 3))
        for b, idx in enumerate(batch.index):
            sens[int(idx)] = s[b]
            l1[int(idx)] = g1[b]
        model.zero_grad()
    return sens, l1


def _mean_by_index(values: dict[int, np.ndarray]) -> np.ndarray:
    # fixed index order makes the mean independent of batch order
    return np.mean([values[k] for k in sorted(values)], axis=0)


def head_importance(model: GraphTransformer, batches: Sequence[Batch], state: PruneState | None = None) -> HeadScoreBoard:
    """Per-head sensitivity ``|sum(Z * dL/dZ)|`` averaged over graphs."""
    state = state or PruneState()
    sens, _ = _per_graph_head_stats(model, batches, state)
    return HeadScoreBoard(_mean_by_index(sens), None, len(sens))


def head_gradients(model: GraphTransformer, batches: Sequence[Batch], state: PruneState | None = None) -> np.ndarray:
    """Mean ``||dL/dZ||_1`` per head, measured with every head switched on."""
    lifted = (state or PruneState()).copy()
    lifted.head_mask = None
    _, l1 = _per_graph_head_stats(model, batches, lifted)
    return _mean_by_index(l1)


def _ranked(values: np.ndarray, candidates: np.ndarray, descending: bool) -> list[tuple[int, int]]:
    cells = [tuple(map(int, c)) for c in np.argwhere(candidates)]  # row-major (layer, head)
    key = (lambda c: -values[c]) if descending else (lambda c: values[c])
    return sorted(cells, key=key)  # stable: ties keep (layer, head) order


def prune_heads(scores: np.ndarray | HeadScoreBoard, target_sparsity: float, mask: np.ndarray) -> np.ndarray:
    """Deactivate lowest-score active heads until ``ceil(s * L * N_h)`` are off.

    Ranking is global across layers; a layer never loses its last head.
    """
    if isinstance(scores, HeadScoreBoard):
        scores = scores.scores
    if not 0 <= target_sparsity < 1:
        raise ValueError("target_sparsity must be in [0, 1)")
    mask = np.array(mask, dtype=int, copy=True)
    L, H = mask.shape
    target = ceil_count(target_sparsity, L * H)
    if target > L * (H - 1):
        raise ValueError(f"cannot deactivate {target} heads while keeping one head per layer")
    inactive = int((mask == 0).sum())
    for l, h in _ranked(scores, mask == 1, descending=False):
        if inactive >= target:
            break
        if mask[l].sum() <= 1:
            continue
        mask[l, h] = 0
        inactive += 1
    return mask


def regrow_heads(grads: np.ndarray, count: int, mask: np.ndarray, scores: np.ndarray | None = None) -> np.ndarray:
    """Swap up to ``count`` heads: reactivate the inactive heads with the
    largest gradient norm and switch off as many of the lowest-score
    previously active heads.

    Swaps are made in pairs, so sparsity is unchanged; a swap that would
    leave no removable head (per-layer floor) is skipped.
    """
    mask = np.array(mask, dtype=int, copy=True)
    inactive = int((mask == 0).sum())
    if count < 0 or count > inactive:
        raise ValueError(f"cannot regrow {count} of {inactive} inactive heads")
    if count == 0:
        return mask
    if scores is None:
        scores = np.zeros(mask.shape)
    removable = _ranked(scores, mask == 1, descending=False)
    for l, h in _ranked(grads, mask == 0, descending=True)[:count]:
        mask[l, h] = 1
        for cell in removable:
            if mask[cell[0]].sum() > 1:
                mask[cell] = 0
                removable.remove(cell)
                break
        else:
            mask[l, h] = 0
            break
    return mask
