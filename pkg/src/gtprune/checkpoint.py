"""Checkpoint files and run directories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .model import GraphTransformer, ModelConfig, PruneState, TokenSettings

FORMAT = "gtprune-checkpoint/1"


@dataclass
class Checkpoint:
    model_config: ModelConfig
    run_config: RunConfig
    params: dict[str, np.ndarray]
    state: PruneState
    dataset_hash: str
    report: dict = field(default_factory=dict)

    def model(self) -> GraphTransformer:
        return GraphTransformer(self.model_config, {k: T.parameter(v.copy()) for k, v in self.params.items()})


def save_checkpoint(path: str | Path, model: GraphTransformer, state: PruneState, cfg: RunConfig, dataset_hash: str, report: dict) -> None:
    header = {
        "format": FORMAT,
        "model_config": model.config.to_dict(),
        "run_config": cfg.to_text(),
        "dataset_hash": dataset_hash,
        "head_mask": None if state.head_mask is None else state.head_mask.astype(int).tolist(),
        "layer_mask": state.layer_mask,
        "tokens": {
            "keep_ratio": state.tokens.keep_ratio,
            "score_drop": state.tokens.score_drop,
            "temperature": state.tokens.temperature,
        },
        "report": report,
    }
    arrays = {f"param/{k}": p.data for k, p in model.params.items()}
    arrays.update({f"mask/{k}": m for k, m in state.weight_masks.items()})
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a checkpoint written by this package")
        params = {k[6:]: z[k].copy() for k in z.files if k.startswith("param/")}
        masks = {k[5:]: z[k].copy() for k in z.files if k.startswith("mask/")}
    head = header["head_mask"]
    state = PruneState(
        head_mask=None if head is None else np.asarray(head, dtype=int),
        layer_mask=header["layer_mask"],
        weight_masks=masks,
        tokens=TokenSettings(**header["tokens"]),
    )
    return Checkpoint(
        ModelConfig.from_dict(header["model_config"]),
        RunConfig.from_text(header["run_config"]),
        params,
        state,
        header["dataset_hash"],
        header["report"],
    )


def run_directory(out_dir: str | Path, cfg: RunConfig) -> Path:
    path = Path(out_dir) / cfg.digest()
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run(result, out_dir: str | Path) -> Path:
    """Write every artifact of a finished run under ``out_dir/<config hash>``."""
    from .analysis import record_activations, save_recording, write_token_lists
    from .train import write_metrics_csv, write_report_json

    cfg = result.config
    run = run_directory(out_dir, cfg)
    (run / "config.txt").write_text(cfg.to_text())
    write_metrics_csv(result.history, run / "metrics.csv")
    write_report_json(result.report, run / "report.json")
    save_checkpoint(run / "checkpoint.npz", result.model, result.state, cfg, result.report["dataset_hash"], result.report)
    if result.head_boards:
        path = run / "head_scores.csv"
        path.unlink(missing_ok=True)
        for epoch, board, mask in result.head_boards:
            board.to_csv(path, mask, epoch)
    if result.sparsity_log is not None:
        result.sparsity_log.to_csv(run / "sparsity.csv")
    if cfg.pruner == "layer":
        layer = {"bits": result.state.layer_mask, "drop_order": result.layer_order}
        (run / "layer_mask.json").write_text(json.dumps(layer, indent=2) + "\n")
    test = [result.graphs[i] for i in result.split.test]
    if cfg.pruner == "token" or cfg.record_activations:
        recording = record_activations(result.model, test, result.state, index=result.split.test)
        if cfg.pruner == "token":
            write_token_lists(recording, run / "tokens.jsonl")
        if cfg.record_activations:
            save_recording(recording, run / "activations.npz")
    return run
