"""Redundancy diagnostics over recorded activations.

Attention profiles, pairwise head distances (Jensen-Shannon, distance
correlation) and pairwise layer similarity (linear CKA), plus CSV and
SVG heatmap writers.
"""

from __future__ import annotations

import csv
import html
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_TOL = 1e-6


def attention_profile(attn: np.ndarray, n_valid: int | None = None) -> np.ndarray:
    """Mean attention each key receives over the valid query rows."""
    attn = np.asarray(attn, dtype=float)
    n = attn.shape[-1] if n_valid is None else n_valid
    if n < 1:
        raise ValueError("empty attention record")
    return attn[:n, :n].mean(axis=0)


def _kl2(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0) / np.where(q > 0, q, 1.0)), 0.0)
    return terms.sum(axis=-1)


def js_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise Jensen-Shannon divergence in bits."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    m = 0.5 * (p + q)
    return 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)


def _check_rows(mats: Sequence[np.ndarray]) -> None:
    for a in mats:
        if np.any(np.abs(a.sum(axis=-1) - 1.0) > ROW_TOL):
            raise ValueError("attention rows must sum to 1")


def js_distance(head_a: Sequence[np.ndarray], head_b: Sequence[np.ndarray]) -> float:
    """Mean per-row JS distance (sqrt of base-2 divergence) over all graphs.

    Each argument is a list of per-graph row-stochastic ``(n, n)`` arrays.
    """
    if len(head_a) != len(head_b):
        raise ValueError("heads were recorded on different graph sets")
    _check_rows(head_a)
    _check_rows(head_b)
    rows = []
    for a, b in zip(head_a, head_b):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        div = np.clip(js_divergence(a, b), 0.0, 1.0)
        rows.append(np.sqrt(div))
    return float(np.concatenate(rows).mean())


def _double_centered(x: np.ndarray) -> np.ndarray:
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    return d - d.mean(axis=0, keepdims=True) - d.mean(axis=1, keepdims=True) + d.mean()


def dcor(x: np.ndarray, y: np.ndarray) -> float:
    """Distance correlation of paired samples (rows are observations)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("dcor needs at least two paired observations")
    a, b = _double_centered(x), _double_centered(y)
    dcov2 = (a * b).mean()
    dvar_x, dvar_y = (a * a).mean(), (b * b).mean()
    if dvar_x <= 0 or dvar_y <= 0:
        warnings.warn("dcor: constant sample, distance variance is zero", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.sqrt(max(dcov2, 0.0) / np.sqrt(dvar_x * dvar_y)))


def head_dcor(head_a: Sequence[np.ndarray], head_b: Sequence[np.ndarray]) -> float:
    """Per-graph dCor between two heads' attention matrices (query rows are
    the paired observations), averaged over graphs with n >= 2."""
    vals = [dcor(a, b) for a, b in zip(head_a, head_b) if a.shape[0] >= 2]
    if not vals:
        raise ValueError("no graph with at least two nodes")
    return float(np.mean(vals))


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"sample counts differ: {x.shape[0]} vs {y.shape[0]}")
    x = x - x.mean(axis=0, keepdims=True)
    y = y - y.mean(axis=0, keepdims=True)
    cross = np.linalg.norm(y.T @ x) ** 2
    denom = np.linalg.norm(x.T @ x) * np.linalg.norm(y.T @ y)
    if denom == 0:
        warnings.warn("linear_cka: zero-norm representation", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(min(1.0, cross / denom))


def head_redundancy(records: dict[tuple[int, int], list[np.ndarray]], metric: str = "js") -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Symmetric distance matrix over all recorded (layer, head) pairs.

    ``js`` gives Jensen-Shannon distance; ``dcor`` gives ``1 - dCor``.
    """
    keys = sorted(records)
    k = len(keys)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            if metric == "js":
                v = js_distance(records[keys[i]], records[keys[j]])
            elif metric == "dcor":
                v = 1.0 - head_dcor(records[keys[i]], records[keys[j]])
            else:
                raise ValueError(f"unknown metric {metric!r}")
            out[i, j] = out[j, i] = v
    return out, keys


def layer_similarity(outputs: dict[str, np.ndarray]) -> tuple[np.ndarray, list[str]]:
    """Pairwise linear CKA between recorded layer representations."""
    names = list(outputs)
    k = len(names)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = linear_cka(outputs[names[i]], outputs[names[j]])
    return out, names


# ---------------------------------------------------------------- writers


def write_matrix_csv(path: str | Path, matrix: np.ndarray, labels: Sequence[str], header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, matrix):
            w.writerow([lab] + [f"{v:.10g}" for v in row])


def _ramp(v: float, lo: float, hi: float) -> str:
    t = 0.0 if hi <= lo else float(np.clip((v - lo) / (hi - lo), 0, 1))
    # white -> dark blue
    r = int(round(255 * (1 - t) + 8 * t))
    g = int(round(255 * (1 - t) + 48 * t))
    b = int(round(255 * (1 - t) + 107 * t))
    return f"rgb({r},{g},{b})"


def write_heatmap_svg(path: str | Path, matrix: np.ndarray, labels: Sequence[str], title: str = "", vmin: float | None = None, vmax: float | None = None) -> None:
    matrix = np.asarray(matrix, dtype=float)
    lo = float(matrix.min()) if vmin is None else vmin
    hi = float(matrix.max()) if vmax is None else vmax
    cell, margin = 36, 70
    k = len(labels)
    size = margin + cell * k + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" font-family="sans-serif" font-size="9">',
        f'<text x="{margin}" y="14" font-size="12">{html.escape(title)}</text>',
    ]
    for i in range(k):
        y = margin + i * cell
        parts.append(f'<text x="{margin - 4}" y="{y + cell / 2 + 3}" text-anchor="end">{html.escape(str(labels[i]))}</text>')
        parts.append(
            f'<text x="{margin + i * cell + cell / 2}" y="{margin - 6}" text-anchor="middle">{html.escape(str(labels[i]))}</text>'
        )
        for j in range(k):
            v = matrix[i, j]
            x = margin + j * cell
            fill = _ramp(v, lo, hi)
            ink = "white" if hi > lo and (v - lo) / (hi - lo) > 0.55 else "black"
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"/>')
            parts.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" text-anchor="middle" fill="{ink}">{v:.2f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
