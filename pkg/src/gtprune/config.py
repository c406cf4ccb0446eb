"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

PRUNERS = ("none", "token", "head", "layer", "weight")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    dataset: str = "synth"  # "synth" or a JSONL path
    synth_count: int = 500
    synth_n_min: int = 8
    synth_n_max: int = 20
    synth_dim: int = 8
    synth_motif: str = "triangle"
    synth_positive_fraction: float = 0.5
    synth_avg_degree: float = 1.0
    synth_seed: int = 0
    num_classes: int = 0  # 0: infer from labels
    train_frac: float = 0.7
    val_frac: float = 0.1
    split_seed: int = 0
    # model
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    num_gnn_layers: int = 2
    num_transformer_layers: int = 4
    stack_style: str = "prelude"
    # optimisation
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    metric: str = "accuracy"  # or "auc"
    # pruning: exactly one family is active
    pruner: str = "none"
    token_keep_ratio: float = 0.5
    token_score_drop: float = 0.1
    token_tau_start: float = 1.0
    token_tau_end: float = 0.1
    token_stages: str = "0"
    head_sparsity: float = 0.5
    head_prune_epoch: int = -1  # -1: 30% of epochs
    head_regrow_interval: int = 5
    head_regrow_fraction: float = 0.1
    layer_sparsity: float = 0.5
    layer_keep_prob: float = -1.0  # -1: 1 - layer_sparsity
    layer_finalize_epoch: int = -1  # -1: 60% of epochs
    layer_finalize: str = "greedy"  # or "random"
    weight_final_sparsity: float = 0.5
    weight_initial_sparsity: float = 0.0
    weight_start_epoch: int = -1  # -1: 10% of epochs
    weight_steps: int = -1  # -1: derived so steps * interval ~ 60% of epochs
    weight_interval: int = -1
    weight_regrow_fraction: float = 0.1
    weight_regrow_stop: int = -1  # -1: 80% of epochs
    # outputs
    record_activations: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self, explicit: set[str] | None = None) -> None:
        if self.pruner not in PRUNERS:
            raise ConfigError(f"pruner must be one of {PRUNERS}, got {self.pruner!r}")
        if explicit:
            for key in explicit:
                family = key.split("_", 1)[0]
                if family in PRUNERS[1:] and family != self.pruner and getattr(self, key) != _DEFAULTS[key]:
                    raise ConfigError(f"{key} is set but pruner={self.pruner}; exactly one pruner may be active per run")
        if self.metric not in ("accuracy", "auc"):
            raise ConfigError("metric must be 'accuracy' or 'auc'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 < self.token_keep_ratio <= 1:
            raise ConfigError("token_keep_ratio must be in (0, 1]")
        for key in ("head_sparsity", "layer_sparsity", "weight_final_sparsity", "token_score_drop"):
            if not 0 <= getattr(self, key) < 1:
                raise ConfigError(f"{key} must be in [0, 1)")
        if self.layer_finalize not in ("greedy", "random"):
            raise ConfigError("layer_finalize must be 'greedy' or 'random'")

    # derived schedule values
    def _frac_epoch(self, value: int, frac: float) -> int:
        return value if value >= 0 else int(round(frac * self.epochs))

    @property
    def head_prune_at(self) -> int:
        return max(1, self._frac_epoch(self.head_prune_epoch, 0.3))

    @property
    def layer_finalize_at(self) -> int:
        return max(1, self._frac_epoch(self.layer_finalize_epoch, 0.6))

    @property
    def layer_q(self) -> float:
        return self.layer_keep_prob if self.layer_keep_prob > 0 else 1.0 - self.layer_sparsity

    @property
    def stages(self) -> tuple[int, ...]:
        return tuple(int(s) for s in str(self.token_stages).replace(";", ",").split(",") if s.strip())

    def weight_schedule_args(self) -> dict:
        start = self._frac_epoch(self.weight_start_epoch, 0.1)
        span = max(1, int(round(0.6 * self.epochs)))
        interval = self.weight_interval if self.weight_interval > 0 else max(1, int(round(span / 10)))
        steps = self.weight_steps if self.weight_steps > 0 else max(1, span // interval)
        stop = self._frac_epoch(self.weight_regrow_stop, 0.8)
        return dict(
            final_sparsity=self.weight_final_sparsity,
            initial_sparsity=self.weight_initial_sparsity,
            start_epoch=start,
            steps=steps,
            interval=interval,
            regrow_fraction=self.weight_regrow_fraction,
            regrow_until=stop,
        )

    # serialisation
    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        cfg = cls(**values)
        cfg.validate(set(values))
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls(**d)
        cfg.validate(set(d))
        return cfg


_DEFAULTS = {f.name: f.default for f in fields(RunConfig)}


def _coerce(type_name, value: str, key: str):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if t == "int":
            return int(value)
        if t == "float":
            return float(value)
        if t == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {t}") from None
    return value
