"""Gradual magnitude pruning of weight matrices with gradient regrowth."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ._util import ceil_count


@dataclass
class PruneSchedule:
    final_sparsity: float
    initial_sparsity: float = 0.0
    start_epoch: int = 0
    steps: int = 1
    interval: int = 1
    regrow_fraction: float = 0.1
    # no regrowth at or after this epoch, so the mask can settle
    regrow_until: int | None = None

    def __post_init__(self):
        if not 0 <= self.initial_sparsity <= self.final_sparsity < 1:
            raise ValueError("need 0 <= initial_sparsity <= final_sparsity < 1")
        if self.steps < 1 or self.interval < 1:
            raise ValueError("steps and interval must be >= 1")
        if not 0 <= self.regrow_fraction <= 1:
            raise ValueError("regrow_fraction must be in [0, 1]")

    @property
    def end_epoch(self) -> int:
        return self.start_epoch + self.steps * self.interval

    def is_step(self, epoch: int) -> bool:
        offset = epoch - self.start_epoch
        return 0 <= offset <= self.steps * self.interval and offset % self.interval == 0


def schedule_sparsity(t: float, sched: PruneSchedule) -> float:
    """Cubic ramp from initial to final sparsity, clamped outside the window."""
    span = sched.steps * sched.interval
    if t <= sched.start_epoch:
        return sched.initial_sparsity
    if t >= sched.start_epoch + span:
        return sched.final_sparsity
    frac = 1.0 - (t - sched.start_epoch) / span
    return sched.final_sparsity + (sched.initial_sparsity - sched.final_sparsity) * frac**3


def magnitude_prune(weight: np.ndarray, mask: np.ndarray, sparsity: float) -> np.ndarray:
    """Zero the mask at the ``ceil(p * |W|)`` smallest effective magnitudes.

    Already-masked entries have effective magnitude 0 and so stay masked.
    Ties go to the lower flat index.
    """
    if not 0 <= sparsity < 1:
        raise ValueError("sparsity must be in [0, 1)")
    mask = np.array(mask, dtype=float, copy=True)
    count = ceil_count(sparsity, weight.size)
    if count == 0:
        return mask
    magnitude = np.abs(weight * mask).ravel()
    idx = np.argsort(magnitude, kind="stable")[:count]
    flat = mask.reshape(-1)
    flat[idx] = 0.0
    return mask


def regrow_weights(
    weight: np.ndarray,
    grads: np.ndarray,
    mask: np.ndarray,
    fraction: float,
) -> np.ndarray:
    """Reactivate the ``fraction`` of masked entries with the largest
    ``|grad|``, then drop as many of the smallest surviving old weights so the
    sparsity is unchanged."""
    mask = np.array(mask, dtype=float, copy=True)
    flat = mask.reshape(-1)
    masked = np.flatnonzero(flat == 0)
    old_active = np.flatnonzero(flat == 1)
    count = min(int(fraction * len(masked)), len(old_active))
    if count <= 0:
        return mask
    g = np.abs(np.asarray(grads)).ravel()[masked]
    revive = masked[np.argsort(-g, kind="stable")[:count]]
    flat[revive] = 1.0
    magnitude = np.abs(weight.ravel()[old_active])
    flat[old_active[np.argsort(magnitude, kind="stable")[:count]]] = 0.0
    return mask


def apply_weight_masks(params: Mapping[str, np.ndarray], masks: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for name, value in params.items():
        if name in masks:
            if masks[name].shape != np.shape(value):
                raise ValueError(f"mask shape {masks[name].shape} != weight shape {np.shape(value)} for {name}")
            out[name] = value * masks[name]
        else:
            out[name] = value
    return out


def realized_sparsity(masks: Mapping[str, np.ndarray]) -> tuple[dict[str, float], float]:
    per = {k: float(1.0 - m.mean()) for k, m in masks.items()}
    total = sum(m.size for m in masks.values())
    zeros = sum(int((m == 0).sum()) for m in masks.values())
    return per, zeros / total if total else 0.0


class SparsityLog:
    """Per-step (epoch, scheduled p, per-tensor p, global p) rows."""

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, epoch: int, scheduled: float, masks: Mapping[str, np.ndarray]) -> None:
        per, overall = realized_sparsity(masks)
        self.rows.append({"epoch": epoch, "scheduled": scheduled, "global": overall, **per})

    def to_csv(self, path: str | Path) -> None:
        if not self.rows:
            return
        fields = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
