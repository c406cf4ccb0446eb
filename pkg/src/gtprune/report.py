"""Dense vs pruned comparison tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .checkpoint import Checkpoint

COLUMNS = ["run", "pruner", "sparsity", "params", "flops", "flops_saving", "accuracy", "delta_accuracy"]


class ReportError(ValueError):
    pass


@dataclass
class ReportRow:
    run: str
    pruner: str
    sparsity: float
    params: int
    flops: float
    flops_saving: float
    accuracy: float
    delta_accuracy: float

    def values(self) -> list:
        return [getattr(self, c) for c in COLUMNS]


def _split_key(ck: Checkpoint) -> tuple:
    c = ck.run_config
    return (c.train_frac, c.val_frac, c.split_seed)


def compare(dense: Checkpoint, pruned: Checkpoint) -> list[ReportRow]:
    """(sparsity, #params, FS, accuracy) rows for a dense and a pruned run.

    FS is taken against the dense run's forward FLOPs on the same test split.
    """
    if dense.dataset_hash != pruned.dataset_hash:
        raise ReportError(f"dataset hash mismatch: {dense.dataset_hash[:12]} vs {pruned.dataset_hash[:12]}")
    if _split_key(dense) != _split_key(pruned):
        raise ReportError("runs use different train/val/test splits")
    base_flops = dense.report["flops"]
    base_acc = dense.report["final_test_metric"]
    rows = []
    for label, ck in (("dense", dense), ("pruned", pruned)):
        r = ck.report
        rows.append(
            ReportRow(
                label,
                r["pruner"],
                r["sparsity"],
                r["params"],
                r["flops"],
                1.0 - r["flops"] / base_flops,
                r["final_test_metric"],
                r["final_test_metric"] - base_acc,
            )
        )
    return rows


def to_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
    return buf.getvalue()


def to_text(rows: list[ReportRow]) -> str:
    header = ["Run", "Pruner", "Spar.", "#Para.", "FLOPs", "FS", "Acc.", "dAcc"]
    body = [
        [
            r.run,
            r.pruner,
            f"{100 * r.sparsity:.0f}%",
            f"{r.params:,}",
            f"{r.flops:.4g}",
            f"{100 * r.flops_saving:.2f}%",
            f"{100 * r.accuracy:.2f}",
            f"{100 * r.delta_accuracy:+.2f}",
        ]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(x.rjust(w) for x, w in zip(line, widths)) for line in [header, *body]]
    return "\n".join(lines) + "\n"
