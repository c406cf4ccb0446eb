"""Exact per-forward FLOPs and parameter accounting.

Counting convention (one graph, one forward pass):

* a multiply-accumulate is 2 FLOPs; bias adds, activations, LayerNorm and
  the readout mean are not counted;
* GCN layer: ``2 * nnz(A + I) * d_out`` for propagation plus
  ``2 * n * d_in * d_out * density(W)`` for the feature transform;
* each active head: ``2 * n * d * d' * density`` for each of its Q, K, V
  column blocks and its output-projection row block, ``2 * n^2 * d'`` for
  ``Q K^T``, ``2 * n^2 * d'`` for ``P V`` and ``5 * n^2`` for the softmax;
* FFN: ``2 * n * d * f * density(W1) + 2 * n * f * d * density(W2)``;
* token scorer: ``2 * nnz(A + I) * 2 + 2 * n * d * 2``;
* classifier: ``2 * d * C``.

Masked heads, dropped sublayers and pruned weights contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Mapping, Sequence

import numpy as np

from .model import ModelConfig, PruneState, is_prunable_weight, sublayer_of


@dataclass
class FlopsReport:
    gnn_flops: float = 0.0
    mha_flops: float = 0.0
    ffn_flops: float = 0.0
    scorer_flops: float = 0.0
    classifier_flops: float = 0.0
    # the n^2 part of mha_flops (Q K^T, softmax, P V)
    attention_score_flops: float = 0.0
    params: int = 0

    @property
    def total_flops(self) -> float:
        return self.gnn_flops + self.mha_flops + self.ffn_flops + self.scorer_flops + self.classifier_flops

    def __add__(self, other: "FlopsReport") -> "FlopsReport":
        return FlopsReport(
            self.gnn_flops + other.gnn_flops,
            self.mha_flops + other.mha_flops,
            self.ffn_flops + other.ffn_flops,
            self.scorer_flops + other.scorer_flops,
            self.classifier_flops + other.classifier_flops,
            self.attention_score_flops + other.attention_score_flops,
            max(self.params, other.params),
        )

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total_flops"] = self.total_flops
        return d


def _density(state: PruneState | None, name: str, cols: slice | None = None, rows: slice | None = None) -> float:
    if state is None or name not in state.weight_masks:
        return 1.0
    m = state.weight_masks[name]
    if cols is not None:
        m = m[:, cols]
    if rows is not None:
        m = m[rows]
    return float(m.mean())


def count_flops(
    config: ModelConfig,
    n: int,
    adj_nnz: int | Sequence[int] = 0,
    state: PruneState | None = None,
    kept: Mapping[int, int] | None = None,
    induced_nnz: Mapping[int, int] | None = None,
) -> FlopsReport:
    """FLOPs of one forward pass over an ``n``-node graph.

    ``adj_nnz`` is the nonzero count of the (self-loop free) adjacency;
    ``kept[l]`` is the token count left after pruning at block ``l`` and
    ``induced_nnz[l]`` the adjacency nonzeros of the surviving subgraph
    (needed only when GCN layers or further scorers follow a pruning
    stage).
    """
    cfg = config
    d, dp, f, h = cfg.hidden_dim, cfg.head_dim, cfg.ffn_dim, cfg.num_heads
    kept = dict(kept or {})
    induced_nnz = dict(induced_nnz or {})
    rep = FlopsReport(params=count_params(cfg, state))
    tokens = n
    nnz = adj_nnz if isinstance(adj_nnz, (int, np.integer)) else None
    for kind, i in cfg.stages():
        if kind == "gnn":
            if i > 0 and state is not None and not state.layer_bit(f"gnn{i}"):
                continue
            a = nnz if nnz is not None else int(adj_nnz[i])
            d_in = cfg.in_dim if i == 0 else d
            rep.gnn_flops += 2 * (a + tokens) * d + 2 * tokens * d_in * d * _density(state, f"gnn.{i}.weight")
            continue
        pre = f"block.{i}.attn"
        if state is None or state.layer_bit(f"mha{i}"):
            heads = np.ones(h) if state is None or state.head_mask is None else state.head_mask[i]
            for j in np.flatnonzero(heads):
                blk = slice(j * dp, (j + 1) * dp)
                proj = sum(_density(state, f"{pre}.{w}", cols=blk) for w in ("wq", "wk", "wv"))
                proj += _density(state, f"{pre}.wo", rows=blk)
                score = 2 * tokens**2 * dp + 2 * tokens**2 * dp + 5 * tokens**2
                rep.mha_flops += 2 * tokens * d * dp * proj + score
                rep.attention_score_flops += score
        if state is None or state.layer_bit(f"ffn{i}"):
            rep.ffn_flops += 2 * tokens * d * f * (
                _density(state, f"block.{i}.ffn.w1") + _density(state, f"block.{i}.ffn.w2")
            )
        if i in cfg.token_stages and i in kept:
            a = nnz if nnz is not None else 0
            rep.scorer_flops += 2 * (a + tokens) * 2 + 2 * tokens * d * 2
            tokens = kept[i]
            nnz = induced_nnz.get(i, 0)
    rep.classifier_flops = 2 * d * cfg.num_classes
    return rep


_SHAPES: dict[str, dict[str, tuple[int, ...]]] = {}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    from .model import init_params

    key = repr(sorted(config.to_dict().items()))
    if key not in _SHAPES:
        _SHAPES[key] = {k: v.shape for k, v in init_params(config).items()}
    return dict(_SHAPES[key])


def count_params(config: ModelConfig, state: PruneState | None = None) -> int:
    """Parameters surviving export: dropped sublayers and masked heads are
    removed, pruned weights are not counted."""
    shapes = param_shapes(config)
    exported = export_params(config, {k: np.ones(s) for k, s in shapes.items()}, state)
    return int(sum(np.count_nonzero(v) for v in exported.values()))


def export_params(config: ModelConfig, params: Mapping[str, np.ndarray], state: PruneState | None) -> dict[str, np.ndarray]:
    """Physically reduced tensors: dropped sublayers removed, masked heads
    sliced out, pruned weights zeroed."""
    dp = config.head_dim
    out = {}
    for name, value in params.items():
        value = np.asarray(value)
        if state is None:
            out[name] = value
            continue
        sub = sublayer_of(name)
        if sub is not None and not state.layer_bit(sub):
            continue
        if name in state.weight_masks and is_prunable_weight(name):
            value = value * state.weight_masks[name]
        parts = name.split(".")
        if state.head_mask is not None and parts[0] == "block" and parts[2] == "attn" and parts[3] != "bo":
            active = np.flatnonzero(state.head_mask[int(parts[1])])
            keep = np.concatenate([np.arange(j * dp, (j + 1) * dp) for j in active]) if len(active) else np.zeros(0, int)
            value = value[keep] if parts[3] == "wo" else value[:, keep]
        out[name] = value
    return out
