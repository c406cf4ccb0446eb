"""Command-line entry point: train, report, analyze, synth, convert-tu."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig


def _checkpoint_path(p: str) -> Path:
    path = Path(p)
    return path / "checkpoint.npz" if path.is_dir() else path


def _train(args) -> int:
    from .checkpoint import write_run
    from .train import train

    text = Path(args.config).read_text() if args.config else ""
    if args.set:
        text += "\n" + "\n".join(args.set) + "\n"
    cfg = RunConfig.from_text(text)
    result = train(cfg)
    run = write_run(result, args.out)
    r = result.report
    print(f"run dir: {run}")
    print(f"test {cfg.metric}: {r['final_test_metric']:.4f}  params: {r['params']}  FLOPs saving: {100 * r['flops_saving']:.2f}%")
    return 0


def _report(args) -> int:
    from .checkpoint import load_checkpoint
    from .report import compare, to_csv, to_text

    rows = compare(load_checkpoint(_checkpoint_path(args.dense)), load_checkpoint(_checkpoint_path(args.pruned)))
    print(to_text(rows), end="")
    if args.out:
        Path(args.out).write_text(to_csv(rows))
    return 0


def _analyze(args) -> int:
    from .analysis import cmd_analyze
    from .checkpoint import load_checkpoint
    from .graphs import dataset_hash, load_jsonl, split_dataset
    from .train import load_dataset

    ck = load_checkpoint(_checkpoint_path(args.ckpt))
    graphs = load_jsonl(args.dataset) if args.dataset else load_dataset(ck.run_config)
    if dataset_hash(graphs) != ck.dataset_hash:
        print("error: dataset does not match the checkpoint's dataset hash", file=sys.stderr)
        return 2
    c = ck.run_config
    index = split_dataset(len(graphs), c.train_frac, c.val_frac, c.split_seed).test
    out = Path(args.out) if args.out else _checkpoint_path(args.ckpt).parent / "analysis"
    files = cmd_analyze(ck.model(), [graphs[i] for i in index], args.which, out, ck.state, index)
    for f in files:
        print(f)
    return 0


def _synth(args) -> int:
    from .graphs import dump_jsonl, synth_motif_dataset

    graphs = synth_motif_dataset(
        args.count, (args.n_min, args.n_max), args.dim, args.motif, args.positive_fraction, args.seed, args.avg_degree
    )
    dump_jsonl(graphs, args.out)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def _convert(args) -> int:
    from .graphs import convert_tu, dump_jsonl

    graphs = convert_tu(args.input, args.name)
    dump_jsonl(graphs, args.out)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtprune", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run and write its run directory")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", default="runs", help="parent of the run directory (default: runs)")
    p.set_defaults(func=_train)

    p = sub.add_parser("report", help="compare a dense and a pruned checkpoint")
    p.add_argument("--dense", required=True)
    p.add_argument("--pruned", required=True)
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=_report)

    p = sub.add_parser("analyze", help="record activations and run a redundancy analysis")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--which", required=True, choices=["attention", "heads", "layers", "tokens"])
    p.add_argument("--dataset", help="JSONL dataset (default: rebuild from the run config)")
    p.add_argument("--out", help="output directory (default: <run dir>/analysis)")
    p.set_defaults(func=_analyze)

    p = sub.add_parser("synth", help="generate a motif-detection dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--n-min", type=int, default=8)
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--motif", default="triangle")
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--avg-degree", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_synth)

    p = sub.add_parser("convert-tu", help="convert a TU-format dataset directory to JSONL")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="dataset file prefix (default: directory name)")
    p.set_defaults(func=_convert)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
