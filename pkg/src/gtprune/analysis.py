"""Activation recording and the redundancy analyses run on checkpoints."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .graphs import Graph, make_batches
from .model import GraphTransformer, PruneState, Recorder
from .redundancy import (
    attention_profile,
    head_redundancy,
    layer_similarity,
    write_heatmap_svg,
    write_matrix_csv,
)

ANALYSES = ("attention", "heads", "layers", "tokens")
CKA_MAX_GRAPHS = 128


@dataclass
class Recording:
    """Per-graph activations of one eval-mode pass.

    ``attn[l][g]`` is the ``(heads, n_l, n_l)`` attention of block ``l`` on
    graph ``g``; ``outputs[name][g]`` the ``(n_l, d)`` sublayer output and
    ``node_ids[name][g]`` the original node ids of its rows.
    """

    index: list[int]
    num_nodes: list[int]
    head_mask: np.ndarray | None = None
    attn: dict[int, list[np.ndarray]] = field(default_factory=dict)
    outputs: dict[str, list[np.ndarray]] = field(default_factory=dict)
    node_ids: dict[str, list[np.ndarray]] = field(default_factory=dict)
    tokens: dict[int, list[np.ndarray]] = field(default_factory=dict)


def record_activations(
    model: GraphTransformer,
    graphs: Sequence[Graph],
    state: PruneState | None = None,
    index: Sequence[int] | None = None,
    batch_size: int = 32,
) -> Recording:
    state = state or PruneState()
    index = list(range(len(graphs))) if index is None else [int(i) for i in index]
    rec_all = Recording(index, [g.n for g in graphs], None if state.head_mask is None else state.head_mask.copy())
    for batch in make_batches(graphs, batch_size, index=np.arange(len(graphs))):
        rec = Recorder(attention=True, sublayers=True)
        with T.no_grad():
            model.forward(batch, state, training=False, record=rec)
        B = batch.size
        # original ids of the rows at each point of the stack
        ids = [np.arange(n) for n in batch.n_nodes]
        stage_iter = iter(sorted(rec.tokens))
        next_stage = next(stage_iter, None)
        for name, h, valid in rec.outputs:
            counts = valid.sum(axis=1).astype(int)
            rec_all.outputs.setdefault(name, []).extend(h[b, : counts[b]].copy() for b in range(B))
            rec_all.node_ids.setdefault(name, []).extend(ids[b].copy() for b in range(B))
            if next_stage is not None and name == f"ffn{next_stage}":
                ids = rec.tokens[next_stage]
                next_stage = next(stage_iter, None)
        for l, (probs, valid) in rec.attn.items():
            counts = valid.sum(axis=1).astype(int)
            rec_all.attn.setdefault(l, []).extend(probs[b, :, : counts[b], : counts[b]].copy() for b in range(B))
        for s, lists in rec.tokens.items():
            rec_all.tokens.setdefault(s, []).extend(np.asarray(x).copy() for x in lists)
    return rec_all


def save_recording(rec: Recording, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for l, mats in rec.attn.items():
        for g, m in enumerate(mats):
            arrays[f"attn/{l}/{g}"] = m
    for name, mats in rec.outputs.items():
        for g, m in enumerate(mats):
            arrays[f"out/{name}/{g}"] = m
            arrays[f"ids/{name}/{g}"] = rec.node_ids[name][g]
    for s, lists in rec.tokens.items():
        for g, ids in enumerate(lists):
            arrays[f"tokens/{s}/{g}"] = ids
    meta = {
        "index": rec.index,
        "num_nodes": rec.num_nodes,
        "head_mask": None if rec.head_mask is None else rec.head_mask.tolist(),
        "order": list(rec.outputs),
    }
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_recording(path: str | Path) -> Recording:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        rec = Recording(meta["index"], meta["num_nodes"], None if meta["head_mask"] is None else np.asarray(meta["head_mask"]))
        groups: dict[tuple[str, str], dict[int, np.ndarray]] = {}
        for key in z.files:
            if key == "meta":
                continue
            kind, name, g = key.split("/")
            groups.setdefault((kind, name), {})[int(g)] = z[key]
    ordered = {k: [v[g] for g in sorted(v)] for k, v in groups.items()}
    for name in meta["order"]:
        rec.outputs[name] = ordered[("out", name)]
        rec.node_ids[name] = ordered[("ids", name)]
    for (kind, name), mats in sorted(ordered.items()):
        if kind == "attn":
            rec.attn[int(name)] = mats
        elif kind == "tokens":
            rec.tokens[int(name)] = mats
    return rec


def write_token_lists(rec: Recording, path: str | Path) -> None:
    with open(path, "w") as fh:
        for s in sorted(rec.tokens):
            for g, ids in zip(rec.index, rec.tokens[s]):
                fh.write(json.dumps({"graph": g, "stage": s, "kept": [int(i) for i in ids]}) + "\n")


def _active_heads(rec: Recording) -> list[tuple[int, int]]:
    keys = []
    for l in sorted(rec.attn):
        heads = rec.attn[l][0].shape[0]
        for h in range(heads):
            if rec.head_mask is None or rec.head_mask[l, h]:
                keys.append((l, h))
    return keys


def layer_representations(rec: Recording, max_graphs: int = CKA_MAX_GRAPHS) -> dict[str, np.ndarray]:
    """Stacked node rows per sublayer over the first ``max_graphs`` graphs.

    When tokens were pruned, every layer is restricted to the nodes that
    survive to the last layer so all matrices share their rows.
    """
    names = list(rec.outputs)
    count = min(max_graphs, len(rec.index))
    final = rec.node_ids[names[-1]]
    reps = {}
    for name in names:
        rows = []
        for g in range(count):
            ids = list(rec.node_ids[name][g])
            pos = [ids.index(i) for i in final[g]]
            rows.append(rec.outputs[name][g][pos])
        reps[name] = np.concatenate(rows)
    return reps


def cmd_analyze(
    model: GraphTransformer,
    graphs: Sequence[Graph],
    which: str,
    out_dir: str | Path,
    state: PruneState | None = None,
    index: Sequence[int] | None = None,
) -> list[Path]:
    """Record activations on ``graphs`` and write the chosen analysis.

    Returns the written files.
    """
    if which not in ANALYSES:
        raise ValueError(f"which must be one of {ANALYSES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = record_activations(model, graphs, state, index)
    written: list[Path] = []
    if which == "attention":
        path = out / "attention_profile.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["graph", "layer", "head", "node", "mass", "max_row_error"])
            for l in sorted(rec.attn):
                for g, mats in zip(rec.index, rec.attn[l]):
                    for h, a in enumerate(mats):
                        err = float(np.abs(a.sum(axis=1) - 1.0).max())
                        for node, mass in enumerate(attention_profile(a)):
                            w.writerow([g, l, h, node, f"{mass:.10g}", f"{err:.3g}"])
        written.append(path)
        npz = out / "attention.npz"
        with open(npz, "wb") as fh:
            np.savez_compressed(fh, **{f"{l}/{g}": m for l in rec.attn for g, m in zip(rec.index, rec.attn[l])})
        written.append(npz)
    elif which == "heads":
        keys = _active_heads(rec)
        records = {(l, h): [m[h] for m in rec.attn[l]] for l, h in keys}
        labels = [f"L{l}H{h}" for l, h in keys]
        for metric, title in (("js", "Jensen-Shannon distance"), ("dcor", "1 - distance correlation")):
            matrix, _ = head_redundancy(records, metric)
            write_matrix_csv(out / f"heads_{metric}.csv", matrix, labels, f"{title}; graphs={len(rec.index)}")
            write_heatmap_svg(out / f"heads_{metric}.svg", matrix, labels, title, 0.0, 1.0)
            written += [out / f"heads_{metric}.csv", out / f"heads_{metric}.svg"]
    elif which == "layers":
        matrix, names = layer_similarity(layer_representations(rec))
        write_matrix_csv(out / "layers_cka.csv", matrix, names, f"linear CKA; graphs={min(CKA_MAX_GRAPHS, len(rec.index))}")
        write_heatmap_svg(out / "layers_cka.svg", matrix, names, "linear CKA", 0.0, 1.0)
        written += [out / "layers_cka.csv", out / "layers_cka.svg"]
    else:
        path = out / "tokens.jsonl"
        write_token_lists(rec, path)
        written.append(path)
    return written
