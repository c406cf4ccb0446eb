"""Stochastic sublayer dropping and greedy fixed-mask selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from ._util import ceil_count
from .graphs import Batch
from .model import GraphTransformer, PruneState


@dataclass
class LayerMask:
    bits: dict[str, int]
    mode: str = "stochastic"  # or "fixed"
    keep_prob: float = 1.0
    history: list[str] = field(default_factory=list)  # drop order in fixed mode

    @property
    def dropped(self) -> list[str]:
        return [k for k, v in self.bits.items() if not v]


def sample_layer_mask(names: Sequence[str], keep_prob: float, rng: np.random.Generator) -> LayerMask:
    """One i.i.d. Bernoulli(keep_prob) bit per sublayer; ``gnn0`` is always kept."""
    if not 0 < keep_prob <= 1:
        raise ValueError("keep_prob must be in (0, 1]")
    draws = rng.random(len(names))
    bits = {name: int(name == "gnn0" or u < keep_prob) for name, u in zip(names, draws)}
    return LayerMask(bits, "stochastic", keep_prob)


def apply_layer_mask(h, bit: int, sublayer: Callable):
    """Run ``sublayer(h)`` when the bit is set, otherwise pass ``h`` through untouched."""
    return sublayer(h) if bit else h


def validation_loss(model: GraphTransformer, batches: Sequence[Batch], state: PruneState) -> float:
    total, count = 0.0, 0
    with T.no_grad():
        for batch in batches:
            logits = model.forward(batch, state, training=False)
            total += float(T.cross_entropy(logits, batch.labels, reduction="sum").data)
            count += batch.size
    return total / max(count, 1)


def finalize_layer_prune(
    model: GraphTransformer,
    batches: Sequence[Batch],
    target_sparsity: float,
    state: PruneState | None = None,
) -> LayerMask:
    """Drop ``ceil(s * #prunable)`` sublayers, one at a time, each time
    removing the one whose ablation hurts validation loss least (ties go
    to the deeper sublayer)."""
    if not 0 <= target_sparsity < 1:
        raise ValueError("target_sparsity must be in [0, 1)")
    names = model.config.sublayer_names()
    candidates = model.config.prunable_sublayers()
    n_drop = ceil_count(target_sparsity, len(candidates))
    base = (state or PruneState()).copy()
    bits = {name: 1 for name in names}
    order: list[str] = []
    for _ in range(n_drop):
        best, best_loss = None, np.inf
        for name in candidates:
            if not bits[name]:
                continue
            base.layer_mask = {**bits, name: 0}
            loss = validation_loss(model, batches, base)
            # later sublayers win ties because of <=
            if loss <= best_loss:
                best, best_loss = name, loss
        bits[best] = 0
        order.append(best)
    return LayerMask(bits, "fixed", 1.0 - target_sparsity, order)
