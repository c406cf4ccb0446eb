"""Learnable node (token) selection.

A one-layer GCN scores every node with two logits (keep, drop). During
training a random subset of score rows is zeroed, Gumbel noise is added
and the hard top-k mask is used in the forward pass while gradients
reach the scorer through the soft keep probabilities (straight-through).
Dropped nodes are physically gathered out, so later blocks run on fewer
tokens and the induced subgraph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from ._util import ceil_count, round_half_up
from .tensor import Tensor


@dataclass
class TokenMask:
    mask: np.ndarray  # (B, N) hard 0/1
    keep: np.ndarray  # (B,) kept count per graph
    soft: Tensor | None  # (B, N) keep probabilities in training mode
    applied: Tensor  # value == mask; carries the straight-through gradient
    layer: int = -1


def keep_count(keep_ratio: float, n_valid: int) -> int:
    if n_valid < 1:
        raise ValueError("no valid nodes to select from")
    return max(1, min(n_valid, round_half_up(keep_ratio * n_valid)))


def score_tokens(a_hat: np.ndarray, h: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """GCN projection of node embeddings to (keep, drop) logits."""
    out = T.matmul(Tensor(a_hat), T.matmul(h, weight))
    return out + bias if bias is not None else out


def perturb_scores(scores: Tensor, valid: np.ndarray, score_drop: float, rng: np.random.Generator) -> Tensor:
    """Zero exactly ``ceil(score_drop * n)`` random valid score rows per graph."""
    if not 0 <= score_drop < 1:
        raise ValueError("score_drop must be in [0, 1)")
    if score_drop == 0:
        return scores
    keep_rows = np.array(valid, dtype=float, copy=True)
    for b in range(valid.shape[0]):
        rows = np.flatnonzero(valid[b] > 0)
        drop = ceil_count(score_drop, len(rows))
        keep_rows[b, rng.choice(rows, size=drop, replace=False)] = 0.0
    return scores * keep_rows[..., None]


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def _topk_mask(rank: np.ndarray, valid: np.ndarray, keep: np.ndarray) -> np.ndarray:
    B, N = rank.shape
    mask = np.zeros((B, N))
    for b in range(B):
        rows = np.flatnonzero(valid[b] > 0)
        # stable sort on -rank keeps the lower node index first among ties
        order = rows[np.argsort(-rank[b, rows], kind="stable")]
        mask[b, order[: keep[b]]] = 1.0
    return mask


def select_topk(
    scores: Tensor,
    keep_ratio: float,
    temperature: float,
    mode: str,
    valid: np.ndarray,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> TokenMask:
    """Hard top-k node mask from ``(B, N, 2)`` keep/drop logits.

    Nodes are ranked by the keep-minus-drop margin (plus Gumbel noise in
    training); ranking the margin is the same as ranking the Gumbel-Softmax
    keep probability but stays tie-free when the temperature is tiny.
    """
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must be in (0, 1]")
    valid = np.asarray(valid, dtype=float)
    n_valid = valid.sum(axis=1).astype(int)
    keep = np.array([keep_count(keep_ratio, n) for n in n_valid])
    if mode == "eval":
        rank = scores.data[..., 0] - scores.data[..., 1]
        hard = _topk_mask(rank, valid, keep)
        return TokenMask(hard, keep, None, Tensor(hard))
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if noise is None:
        if rng is None:
            raise ValueError("training-mode selection needs an rng or pinned noise")
        noise = gumbel_noise(rng, scores.shape)
    noisy = scores + noise
    probs = T.softmax_rows(noisy * (1.0 / temperature))
    soft = T.tsum(probs * np.array([1.0, 0.0]), axis=-1)
    rank = noisy.data[..., 0] - noisy.data[..., 1]
    hard = _topk_mask(rank, valid, keep)
    return TokenMask(hard, keep, soft, T.straight_through(hard, soft))


def apply_token_mask(h: Tensor, mask: TokenMask) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Gather kept rows; returns (embeddings, kept index per graph, new validity)."""
    B = mask.mask.shape[0]
    width = int(mask.keep.max())
    index = np.zeros((B, width), dtype=np.intp)
    new_valid = np.zeros((B, width))
    for b in range(B):
        kept = np.flatnonzero(mask.mask[b])
        index[b, : len(kept)] = kept
        new_valid[b, : len(kept)] = 1.0
    scaled = h * T.reshape(mask.applied, mask.applied.shape + (1,))
    out = T.gather_rows(scaled, index) * new_valid[..., None]
    return out, index, new_valid


def prune_tokens(
    h: Tensor,
    adjacency: np.ndarray,
    a_hat: np.ndarray,
    valid: np.ndarray,
    node_ids: np.ndarray,
    weight: Tensor,
    bias: Tensor,
    keep_ratio: float,
    score_drop: float,
    temperature: float,
    *,
    training: bool,
    rng: np.random.Generator | None,
):
    scores = score_tokens(a_hat, h, weight, bias)
    if training:
        if rng is None:
            raise ValueError("training-mode token pruning needs an rng")
        scores = perturb_scores(scores, valid, score_drop, rng)
        mask = select_topk(scores, keep_ratio, temperature, "train", valid, rng=rng)
    else:
        mask = select_topk(scores, keep_ratio, temperature, "eval", valid)
    h, index, new_valid = apply_token_mask(h, mask)
    rows = index[:, :, None]
    adj = np.take_along_axis(np.take_along_axis(adjacency, rows, axis=1), index[:, None, :], axis=2)
    adj = adj * new_valid[:, :, None] * new_valid[:, None, :]
    ids = np.take_along_axis(node_ids, index, axis=1)
    return h, adj, new_valid, ids, mask
