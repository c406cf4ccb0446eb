"""GCN + multi-head-attention graph transformer with mask-aware forward."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from . import tensor as T
from .graphs import Batch
from .tensor import Tensor
from .tokens import prune_tokens

STACK_STYLES = ("prelude", "interleaved")


@dataclass
class ModelConfig:
    in_dim: int
    hidden_dim: int = 64
    num_heads: int = 4
    head_dim: int | None = None
    ffn_dim: int = 128
    num_gnn_layers: int = 2
    num_transformer_layers: int = 4
    num_classes: int = 2
    stack_style: str = "prelude"
    # transformer blocks after which tokens are pruned; empty disables the scorer
    token_stages: tuple[int, ...] = ()
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.head_dim is None:
            self.head_dim = self.hidden_dim // max(self.num_heads, 1)
        self.token_stages = tuple(int(s) for s in self.token_stages)
        dims = (self.in_dim, self.hidden_dim, self.num_heads, self.head_dim, self.ffn_dim, self.num_classes)
        if min(dims) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.num_heads * self.head_dim != self.hidden_dim:
            raise ValueError(f"num_heads * head_dim = {self.num_heads * self.head_dim} != hidden_dim {self.hidden_dim}")
        if self.num_gnn_layers < 1:
            raise ValueError("need at least one GNN layer (it projects the input features)")
        if self.num_transformer_layers < 0:
            raise ValueError("num_transformer_layers must be >= 0")
        if self.stack_style not in STACK_STYLES:
            raise ValueError(f"stack_style must be one of {STACK_STYLES}")
        for s in self.token_stages:
            if not 0 <= s < self.num_transformer_layers:
                raise ValueError(f"token stage {s} outside the transformer stack")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["token_stages"] = list(self.token_stages)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def stages(self) -> list[tuple[str, int]]:
        """Execution order as ``("gnn", i)`` / ``("block", l)`` pairs."""
        g, t = self.num_gnn_layers, self.num_transformer_layers
        if self.stack_style == "prelude":
            return [("gnn", i) for i in range(g)] + [("block", l) for l in range(t)]
        order = []
        for i in range(max(g, t)):
            if i < g:
                order.append(("gnn", i))
            if i < t:
                order.append(("block", i))
        return order

    def sublayer_names(self) -> list[str]:
        names = []
        for kind, i in self.stages():
            if kind == "gnn":
                names.append(f"gnn{i}")
            else:
                names += [f"mha{i}", f"ffn{i}"]
        return names

    def prunable_sublayers(self) -> list[str]:
        # gnn0 maps raw features to the hidden width and is never dropped
        return [s for s in self.sublayer_names() if s != "gnn0"]


def sublayer_of(param_name: str) -> str | None:
    parts = param_name.split(".")
    if parts[0] == "gnn":
        return f"gnn{parts[1]}"
    if parts[0] == "block":
        return f"mha{parts[1]}" if parts[2] in ("attn", "ln1") else f"ffn{parts[1]}"
    return None


def is_prunable_weight(param_name: str) -> bool:
    """Weight matrices eligible for magnitude pruning (not LN, biases, scorer, classifier)."""
    parts = param_name.split(".")
    if parts[0] == "gnn":
        return parts[-1] == "weight"
    if parts[0] == "block":
        return parts[-1] in ("wq", "wk", "wv", "wo", "w1", "w2")
    return False


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng([seed, 0])
    # scorer weights draw from their own stream so enabling token pruning
    # leaves every other initial weight unchanged
    scorer_rng = np.random.default_rng([seed, 1])
    d, f = config.hidden_dim, config.ffn_dim
    p: dict[str, np.ndarray] = {}
    for i in range(config.num_gnn_layers):
        fan_in = config.in_dim if i == 0 else d
        p[f"gnn.{i}.weight"] = _glorot(rng, fan_in, d)
        p[f"gnn.{i}.bias"] = np.zeros(d)
    for l in range(config.num_transformer_layers):
        pre = f"block.{l}"
        for w in ("wq", "wk", "wv", "wo"):
            p[f"{pre}.attn.{w}"] = _glorot(rng, d, d)
        p[f"{pre}.attn.bo"] = np.zeros(d)
        p[f"{pre}.ln1.gain"] = np.ones(d)
        p[f"{pre}.ln1.bias"] = np.zeros(d)
        p[f"{pre}.ffn.w1"] = _glorot(rng, d, f)
        p[f"{pre}.ffn.b1"] = np.zeros(f)
        p[f"{pre}.ffn.w2"] = _glorot(rng, f, d)
        p[f"{pre}.ffn.b2"] = np.zeros(d)
        p[f"{pre}.ln2.gain"] = np.ones(d)
        p[f"{pre}.ln2.bias"] = np.zeros(d)
    p["classifier.weight"] = _glorot(rng, d, config.num_classes)
    p["classifier.bias"] = np.zeros(config.num_classes)
    for s in config.token_stages:
        p[f"scorer.{s}.weight"] = _glorot(scorer_rng, d, 2)
        p[f"scorer.{s}.bias"] = np.zeros(2)
    return {k: T.parameter(v) for k, v in p.items()}


@dataclass
class TokenSettings:
    keep_ratio: float = 1.0
    score_drop: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if not 0 < self.keep_ratio <= 1:
            raise ValueError("keep_ratio must be in (0, 1]")
        if not 0 <= self.score_drop < 1:
            raise ValueError("score_drop must be in [0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class PruneState:
    """Masks of the four prunable families. ``None`` means dense."""

    head_mask: np.ndarray | None = None  # (L, N_h) of 0/1
    layer_mask: dict[str, int] | None = None  # sublayer name -> bit
    weight_masks: dict[str, np.ndarray] = field(default_factory=dict)
    tokens: TokenSettings = field(default_factory=TokenSettings)

    def layer_bit(self, name: str) -> int:
        if self.layer_mask is None:
            return 1
        return int(self.layer_mask.get(name, 1))

    def head_bits(self, layer: int) -> np.ndarray | None:
        return None if self.head_mask is None else self.head_mask[layer]

    def copy(self) -> "PruneState":
        return PruneState(
            head_mask=None if self.head_mask is None else self.head_mask.copy(),
            layer_mask=None if self.layer_mask is None else dict(self.layer_mask),
            weight_masks={k: v.copy() for k, v in self.weight_masks.items()},
            tokens=TokenSettings(**asdict(self.tokens)),
        )


@dataclass
class Recorder:
    """Collects intermediates during one forward pass."""

    attention: bool = False
    head_outputs: bool = False
    sublayers: bool = False
    attn: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    heads: dict[int, Tensor] = field(default_factory=dict)
    outputs: list[tuple[str, np.ndarray, np.ndarray]] = field(default_factory=list)
    tokens: dict[int, list[np.ndarray]] = field(default_factory=dict)
    effective: dict[str, Tensor] = field(default_factory=dict)


def normalized_adjacency(adjacency: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with self-loops only on valid nodes."""
    n = adjacency.shape[-1]
    a = adjacency + np.eye(n) * valid[..., :, None]
    deg = a.sum(axis=-1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[..., :, None] * a * inv[..., None, :]


def gcn_layer(a_hat: np.ndarray, h: Tensor, weight: Tensor, bias: Tensor | None = None, valid: np.ndarray | None = None) -> Tensor:
    out = T.matmul(Tensor(a_hat), T.matmul(h, weight))
    if bias is not None:
        out = out + bias
    out = T.relu(out)
    if valid is not None:
        out = out * valid[..., None]
    return out


def attention_mask(valid: np.ndarray) -> np.ndarray:
    return np.where(valid > 0, 0.0, T.MASK_VALUE)


def mha(
    h: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    bo: Tensor,
    num_heads: int,
    valid: np.ndarray,
    head_mask: np.ndarray | None = None,
    record: dict | None = None,
) -> Tensor:
    """Masked multi-head self-attention over a ``(B, N, d)`` batch."""
    B, N, d = h.shape
    dp = d // num_heads

    def split(x):
        return T.transpose(T.reshape(x, (B, N, num_heads, dp)), (0, 2, 1, 3))

    q, k, v = split(h @ wq), split(h @ wk), split(h @ wv)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dp))
    probs = T.softmax_rows(scores, attention_mask(valid)[:, None, None, :])
    z = T.matmul(probs, v)  # (B, heads, N, dp)
    if record is not None:
        record["probs"] = probs.data
        record["z"] = z
    if head_mask is not None:
        z = z * np.asarray(head_mask, dtype=float)[None, :, None, None]
    merged = T.reshape(T.transpose(z, (0, 2, 1, 3)), (B, N, d))
    return merged @ wo + bo


class GraphTransformer:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def _weight(self, name: str, state: PruneState, record: Recorder | None) -> Tensor:
        w = self.params[name]
        mask = state.weight_masks.get(name)
        if mask is not None:
            w = w * mask
        if record is not None:
            record.effective[name] = w
        return w

    def forward(
        self,
        batch: Batch,
        state: PruneState | None = None,
        *,
        training: bool = False,
        rng: np.random.Generator | None = None,
        record: Recorder | None = None,
    ) -> Tensor:
        cfg = self.config
        state = state or PruneState()
        P = self.params
        adj = batch.adjacency
        valid = batch.valid.astype(float)
        B, N = valid.shape
        node_ids = np.tile(np.arange(N), (B, 1))
        a_hat = normalized_adjacency(adj, valid)
        h = Tensor(batch.features)

        def W(name):
            return self._weight(name, state, record)

        for kind, i in cfg.stages():
            if kind == "gnn":
                if i > 0 and not state.layer_bit(f"gnn{i}"):
                    continue
                h = gcn_layer(a_hat, h, W(f"gnn.{i}.weight"), P[f"gnn.{i}.bias"], valid)
                if record is not None and record.sublayers:
                    record.outputs.append((f"gnn{i}", h.data, valid))
                continue
            pre = f"block.{i}"
            if state.layer_bit(f"mha{i}"):
                rec = {} if record is not None and (record.attention or record.head_outputs) else None
                a = mha(
                    h, W(f"{pre}.attn.wq"), W(f"{pre}.attn.wk"), W(f"{pre}.attn.wv"), W(f"{pre}.attn.wo"),
                    P[f"{pre}.attn.bo"], cfg.num_heads, valid, state.head_bits(i), rec,
                )
                if rec is not None:
                    if record.attention:
                        record.attn[i] = (rec["probs"], valid)
                    if record.head_outputs:
                        record.heads[i] = rec["z"]
                h = (T.layer_norm(a, P[f"{pre}.ln1.gain"], P[f"{pre}.ln1.bias"], cfg.ln_eps) + h) * valid[..., None]
                if record is not None and record.sublayers:
                    record.outputs.append((f"mha{i}", h.data, valid))
            if state.layer_bit(f"ffn{i}"):
                f = T.gelu(h @ W(f"{pre}.ffn.w1") + P[f"{pre}.ffn.b1"]) @ W(f"{pre}.ffn.w2") + P[f"{pre}.ffn.b2"]
                h = (T.layer_norm(f, P[f"{pre}.ln2.gain"], P[f"{pre}.ln2.bias"], cfg.ln_eps) + h) * valid[..., None]
                if record is not None and record.sublayers:
                    record.outputs.append((f"ffn{i}", h.data, valid))
            if i in cfg.token_stages and state.tokens.keep_ratio < 1.0:
                tok = state.tokens
                h, adj, valid, node_ids, _ = prune_tokens(
                    h, adj, a_hat, valid, node_ids, P[f"scorer.{i}.weight"], P[f"scorer.{i}.bias"],
                    tok.keep_ratio, tok.score_drop, tok.temperature, training=training, rng=rng,
                )
                a_hat = normalized_adjacency(adj, valid)
                if record is not None:
                    counts = valid.sum(axis=1).astype(int)
                    record.tokens[i] = [node_ids[b, : counts[b]].copy() for b in range(B)]

        counts = valid.sum(axis=1, keepdims=True)
        pooled = T.tsum(h * valid[..., None], axis=1) * (1.0 / counts)
        return pooled @ P["classifier.weight"] + P["classifier.bias"]

    __call__ = forward
