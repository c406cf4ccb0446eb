"""Training loop with one pruner per run, evaluation and run reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from ._util import ceil_count
from .config import RunConfig
from .flops import FlopsReport, count_flops, count_params
from .graphs import Batch, Graph, dataset_hash, load_jsonl, make_batches, split_dataset, synth_motif_dataset
from .heads import head_gradients, head_importance, prune_heads, regrow_heads
from .layers import finalize_layer_prune, sample_layer_mask
from .model import GraphTransformer, ModelConfig, PruneState, Recorder, TokenSettings, is_prunable_weight
from .weights import PruneSchedule, SparsityLog, magnitude_prune, realized_sparsity, regrow_weights, schedule_sparsity

log = logging.getLogger(__name__)

METRICS_FIELDS = ["epoch", "train_loss", "train_metric", "val_loss", "val_metric", "test_metric", "sparsity"]


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, params: dict[str, T.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, frozen: dict[str, np.ndarray] | None = None) -> None:
        """Update every parameter that has a gradient; entries where
        ``frozen[name]`` is 0 keep their value."""
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if frozen is not None and k in frozen:
                update = update * frozen[k]
            p.data -= update

    def state_dict(self) -> dict:
        return {"lr": self.lr, "betas": [self.b1, self.b2], "eps": self.eps}


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Binary ROC-AUC via the Mann-Whitney rank statistic."""
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def metric_value(kind: str, logits: np.ndarray, labels: np.ndarray) -> float:
    if kind == "auc":
        z = logits - logits.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        return roc_auc(prob[:, 1], labels)
    return accuracy(logits, labels)


def load_dataset(cfg: RunConfig) -> list[Graph]:
    if cfg.dataset == "synth":
        return synth_motif_dataset(
            cfg.synth_count,
            (cfg.synth_n_min, cfg.synth_n_max),
            cfg.synth_dim,
            cfg.synth_motif,
            cfg.synth_positive_fraction,
            cfg.synth_seed,
            cfg.synth_avg_degree,
        )
    return load_jsonl(cfg.dataset, cfg.num_classes or None)


def model_config(cfg: RunConfig, graphs: Sequence[Graph]) -> ModelConfig:
    num_classes = cfg.num_classes or int(max(g.label for g in graphs)) + 1
    return ModelConfig(
        in_dim=graphs[0].features.shape[1],
        hidden_dim=cfg.hidden_dim,
        num_heads=cfg.num_heads,
        ffn_dim=cfg.ffn_dim,
        num_gnn_layers=cfg.num_gnn_layers,
        num_transformer_layers=cfg.num_transformer_layers,
        num_classes=max(2, num_classes),
        stack_style=cfg.stack_style,
        token_stages=cfg.stages if cfg.pruner == "token" else (),
    )


def evaluate(model: GraphTransformer, batches: Sequence[Batch], state: PruneState, metric: str) -> tuple[float, float, np.ndarray]:
    """Return (mean loss, metric, logits) in eval mode."""
    logits, labels = [], []
    with T.no_grad():
        for batch in batches:
            logits.append(model.forward(batch, state, training=False).data)
            labels.append(batch.labels)
    z = np.concatenate(logits)
    y = np.concatenate(labels)
    loss = float(T.cross_entropy(T.Tensor(z), y, reduction="mean").data)
    return loss, metric_value(metric, z, y), z


def dataset_flops(
    model: GraphTransformer,
    graphs: Sequence[Graph],
    state: PruneState | None,
    batch_size: int = 64,
) -> FlopsReport:
    """Summed per-graph FLOPs, with token counts and induced subgraphs taken
    from an eval-mode forward."""
    cfg = model.config
    total = FlopsReport(params=count_params(cfg, state))
    kept_ids: list[dict[int, np.ndarray]] = [{} for _ in graphs]
    if state is not None and cfg.token_stages and state.tokens.keep_ratio < 1:
        for batch in make_batches(graphs, batch_size):
            rec = Recorder()
            with T.no_grad():
                model.forward(batch, state, training=False, record=rec)
            for stage, lists in rec.tokens.items():
                for b, ids in zip(batch.index, lists):
                    kept_ids[int(b)][stage] = ids
    for g, ids in zip(graphs, kept_ids):
        nnz = int(g.adjacency.sum())
        kept = {s: len(v) for s, v in ids.items()}
        induced = {s: int(g.adjacency[np.ix_(v, v)].sum()) for s, v in ids.items()}
        total = total + count_flops(cfg, g.n, nnz, state, kept, induced)
    return total


@dataclass
class RunResult:
    config: RunConfig
    model: GraphTransformer
    state: PruneState
    history: list[dict]
    report: dict
    graphs: list[Graph]
    split: object
    head_boards: list = field(default_factory=list)
    sparsity_log: SparsityLog | None = None
    layer_order: list[str] = field(default_factory=list)


def _linear(start: float, end: float, epoch: int, epochs: int) -> float:
    if epochs <= 1:
        return end
    return start + (end - start) * (epoch - 1) / (epochs - 1)


def train(cfg: RunConfig, graphs: Sequence[Graph] | None = None, on_epoch: Callable[[dict], None] | None = None) -> RunResult:
    started = time.perf_counter()
    graphs = list(graphs) if graphs is not None else load_dataset(cfg)
    split = split_dataset(len(graphs), cfg.train_frac, cfg.val_frac, cfg.split_seed)
    train_g = [graphs[i] for i in split.train]
    val_b = make_batches([graphs[i] for i in split.val], 64, index=split.val)
    test_b = make_batches([graphs[i] for i in split.test], 64, index=split.test)
    train_eval_b = make_batches(train_g, 64, index=split.train)

    mcfg = model_config(cfg, graphs)
    model = GraphTransformer(mcfg, seed=cfg.seed)
    opt = Adam(model.params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 10])
    token_rng = np.random.default_rng([cfg.seed, 11])
    layer_rng = np.random.default_rng([cfg.seed, 12])
    choice_rng = np.random.default_rng([cfg.seed, 13])

    state = PruneState()
    if cfg.pruner == "token":
        state.tokens = TokenSettings(cfg.token_keep_ratio, cfg.token_score_drop, cfg.token_tau_start)
    if cfg.pruner == "head":
        state.head_mask = np.ones((mcfg.num_transformer_layers, mcfg.num_heads), dtype=int)
    sched = None
    sparsity_log = None
    grad_accum: dict[str, np.ndarray] = {}
    if cfg.pruner == "weight":
        sched = PruneSchedule(**cfg.weight_schedule_args())
        state.weight_masks = {k: np.ones_like(p.data) for k, p in model.params.items() if is_prunable_weight(k)}
        sparsity_log = SparsityLog()
    layer_stochastic = cfg.pruner == "layer"
    sublayers = mcfg.sublayer_names()
    head_boards = []
    layer_order: list[str] = []
    regrow_head_stop = int(math.ceil(cfg.epochs * 2 / 3))

    history = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.pruner == "token":
            state.tokens.temperature = _linear(cfg.token_tau_start, cfg.token_tau_end, epoch, cfg.epochs)
        losses = []
        for step, batch in enumerate(make_batches(train_g, cfg.batch_size, shuffle_rng, index=split.train)):
            if layer_stochastic:
                state.layer_mask = sample_layer_mask(sublayers, cfg.layer_q, layer_rng).bits
            rec = Recorder() if sched is not None else None
            logits = model.forward(batch, state, training=True, rng=token_rng, record=rec)
            loss = T.cross_entropy(logits, batch.labels)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {step} (graphs {batch.index.tolist()})")
            loss.backward()
            if rec is not None:
                for name, eff in rec.effective.items():
                    if eff.grad is not None:
                        grad_accum[name] = grad_accum.get(name, 0.0) + eff.grad
            opt.step(state.weight_masks or None)
            model.zero_grad()
            losses.append(float(loss.data))
        if layer_stochastic:
            state.layer_mask = None

        # pruner actions at the epoch boundary
        if sched is not None and sched.is_step(epoch):
            p = schedule_sparsity(epoch, sched)
            for name, mask in state.weight_masks.items():
                w = model.params[name].data
                mask = magnitude_prune(w, mask, p)
                if epoch > sched.start_epoch and (sched.regrow_until is None or epoch < sched.regrow_until):
                    mask = regrow_weights(w, np.abs(grad_accum.get(name, np.zeros_like(w))), mask, sched.regrow_fraction)
                state.weight_masks[name] = mask
            sparsity_log.add(epoch, p, state.weight_masks)
        grad_accum = {}
        if cfg.pruner == "head":
            score_b = make_batches(train_g, 64, index=split.train)
            if epoch == cfg.head_prune_at:
                board = head_importance(model, score_b, state)
                state.head_mask = prune_heads(board, cfg.head_sparsity, state.head_mask)
                head_boards.append((epoch, board, state.head_mask.copy()))
            elif epoch > cfg.head_prune_at and epoch < regrow_head_stop and cfg.head_regrow_interval > 0 \
                    and (epoch - cfg.head_prune_at) % cfg.head_regrow_interval == 0:
                inactive = int((state.head_mask == 0).sum())
                r = ceil_count(cfg.head_regrow_fraction, inactive)
                if r > 0:
                    board = head_importance(model, score_b, state)
                    board.grads = head_gradients(model, score_b, state)
                    state.head_mask = regrow_heads(board.grads, r, state.head_mask, board.scores)
                    head_boards.append((epoch, board, state.head_mask.copy()))
        if cfg.pruner == "layer" and epoch == cfg.layer_finalize_at:
            if cfg.layer_finalize == "greedy":
                fixed = finalize_layer_prune(model, val_b, cfg.layer_sparsity, state)
                state.layer_mask, layer_order = fixed.bits, fixed.history
            else:
                cands = mcfg.prunable_sublayers()
                drop = choice_rng.choice(len(cands), ceil_count(cfg.layer_sparsity, len(cands)), replace=False)
                layer_order = [cands[i] for i in sorted(drop)]
                state.layer_mask = {s: int(s not in layer_order) for s in sublayers}
            layer_stochastic = False

        train_loss = float(np.mean(losses))
        _, train_metric, _ = evaluate(model, train_eval_b, state, cfg.metric)
        val_loss, val_metric, _ = evaluate(model, val_b, state, cfg.metric) if val_b else (float("nan"),) * 3
        _, test_metric, _ = evaluate(model, test_b, state, cfg.metric)
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "train_metric": train_metric,
            "val_loss": val_loss,
            "val_metric": val_metric,
            "test_metric": test_metric,
            "sparsity": current_sparsity(cfg, state, mcfg),
        }
        history.append(row)
        log.info("epoch %d loss %.4f train %.4f val %.4f test %.4f", epoch, train_loss, train_metric, val_metric, test_metric)
        if on_epoch:
            on_epoch(row)

    test_graphs = [graphs[i] for i in split.test]
    dense_model = GraphTransformer(model_config(RunConfig(**{**cfg.__dict__, "pruner": "none"}), graphs), params=model.params)
    dense_flops = dataset_flops(dense_model, test_graphs, None)
    pruned_flops = dataset_flops(model, test_graphs, state)
    report = {
        "config_hash": cfg.digest(),
        "dataset_hash": dataset_hash(graphs),
        "pruner": cfg.pruner,
        "sparsity": current_sparsity(cfg, state, mcfg),
        "optimizer": {"name": "adam", **opt.state_dict()},
        "final_train_metric": history[-1]["train_metric"],
        "final_test_metric": history[-1]["test_metric"],
        "metric": cfg.metric,
        "params_dense": count_params(dense_model.config, None),
        "params": pruned_flops.params,
        "flops_dense": dense_flops.total_flops,
        "flops": pruned_flops.total_flops,
        "flops_saving": 1.0 - pruned_flops.total_flops / dense_flops.total_flops,
        "flops_breakdown": pruned_flops.as_dict(),
        "test_graphs": len(test_graphs),
        "wall_clock_s": time.perf_counter() - started,
    }
    return RunResult(cfg, model, state, history, report, list(graphs), split, head_boards, sparsity_log, layer_order)


def current_sparsity(cfg: RunConfig, state: PruneState, mcfg: ModelConfig) -> float:
    if cfg.pruner == "weight" and state.weight_masks:
        return realized_sparsity(state.weight_masks)[1]
    if cfg.pruner == "head" and state.head_mask is not None:
        return float((state.head_mask == 0).mean())
    if cfg.pruner == "layer" and state.layer_mask is not None:
        cands = mcfg.prunable_sublayers()
        return sum(1 for s in cands if not state.layer_mask.get(s, 1)) / len(cands)
    if cfg.pruner == "token":
        return 1.0 - cfg.token_keep_ratio
    return 0.0


def write_metrics_csv(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_FIELDS)
        for row in history:
            w.writerow([row[k] if k == "epoch" else repr(float(row[k])) for k in METRICS_FIELDS])


def write_report_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
