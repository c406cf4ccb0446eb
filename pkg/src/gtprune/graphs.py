"""Graph records, JSONL ingestion, synthetic motif data and padded batching."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MOTIF_SIZES = {"triangle": 3, "clique4": 4}


class GraphParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Graph:
    adjacency: np.ndarray
    features: np.ndarray
    label: int

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        validate_graph(self.adjacency, self.features)
        self.label = int(self.label)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "edges": [list(e) for e in self.edges()],
            "x": self.features.tolist(),
            "y": self.label,
        }


def validate_graph(adjacency: np.ndarray, features: np.ndarray) -> None:
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise ValueError(f"adjacency must be square, got {adjacency.shape}")
    bad = (adjacency != 0) & (adjacency != 1)
    if bad.any():
        i, j = map(int, np.argwhere(bad)[0])
        raise ValueError(f"non-binary adjacency entry at ({i},{j})")
    if np.diag(adjacency).any():
        i = int(np.flatnonzero(np.diag(adjacency))[0])
        raise ValueError(f"self-loop at ({i},{i})")
    asym = adjacency != adjacency.T
    if asym.any():
        i, j = sorted(map(int, np.argwhere(asym)[0]))
        raise ValueError(f"asymmetric at ({i},{j})")
    if features.shape[0] != adjacency.shape[0]:
        raise ValueError(f"features have {features.shape[0]} rows for {adjacency.shape[0]} nodes")


# ---------------------------------------------------------------- JSONL


def parse_record(record: dict, num_classes: int | None = None) -> Graph:
    n = int(record["n"])
    if n < 1:
        raise ValueError("graph must have at least one node")
    if "adjacency" in record:
        adj = np.asarray(record["adjacency"], dtype=np.float64)
        if adj.shape != (n, n):
            raise ValueError(f"adjacency shape {adj.shape} does not match n={n}")
    else:
        adj = np.zeros((n, n))
        for pair in record.get("edges", []):
            if len(pair) != 2:
                raise ValueError(f"edge {pair} is not a pair")
            i, j = int(pair[0]), int(pair[1])
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) out of range for n={n}")
            if i == j:
                raise ValueError(f"self-loop at ({i},{i})")
            i, j = min(i, j), max(i, j)
            if adj[i, j]:
                raise ValueError(f"duplicate edge ({i},{j})")
            adj[i, j] = adj[j, i] = 1.0
    x = np.asarray(record["x"], dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"x must be a list of {n} feature rows")
    y = int(record["y"])
    if y < 0 or (num_classes is not None and y >= num_classes):
        raise ValueError(f"label {y} out of range")
    return Graph(adj, x, y)


def load_jsonl(path: str | Path, num_classes: int | None = None) -> list[Graph]:
    graphs = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                g = parse_record(json.loads(line), num_classes)
            except (ValueError, KeyError, TypeError) as exc:
                msg = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise GraphParseError(lineno, msg) from exc
            if dim is None:
                dim = g.features.shape[1]
            elif g.features.shape[1] != dim:
                raise GraphParseError(lineno, f"feature dim {g.features.shape[1]} != {dim}")
            graphs.append(g)
    return graphs


def dump_jsonl(graphs: Iterable[Graph], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_record(), separators=(",", ":")) + "\n")


def dataset_hash(graphs: Sequence[Graph]) -> str:
    h = hashlib.sha256()
    for g in graphs:
        h.update(json.dumps(g.to_record(), separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()


def convert_tu(directory: str | Path, name: str | None = None) -> list[Graph]:
    """Read a TU-format dataset (``<name>_A.txt`` etc.) into graphs.

    Node labels become one-hot features; node attributes, if present, are
    appended. Graph labels are remapped to ``0..C-1`` in sorted order.
    """
    directory = Path(directory)
    if name is None:
        found = sorted(directory.glob("*_A.txt"))
        if not found:
            raise FileNotFoundError(f"no *_A.txt in {directory}")
        name = found[0].name[: -len("_A.txt")]

    def read(suffix, dtype=int):
        p = directory / f"{name}_{suffix}.txt"
        if not p.exists():
            return None
        return np.loadtxt(p, delimiter=",", dtype=dtype, ndmin=2 if dtype is float else 1)

    edges = np.loadtxt(directory / f"{name}_A.txt", delimiter=",", dtype=int, ndmin=2) - 1
    indicator = read("graph_indicator") - 1
    graph_labels = read("graph_labels")
    node_labels = read("node_labels")
    node_attrs = read("node_attributes", float)

    feats = []
    if node_labels is not None:
        values = np.unique(node_labels)
        onehot = (node_labels[:, None] == values[None, :]).astype(float)
        feats.append(onehot)
    if node_attrs is not None:
        feats.append(node_attrs)
    if not feats:
        feats.append(np.ones((len(indicator), 1)))
    x_all = np.concatenate(feats, axis=1)
    label_values = {v: i for i, v in enumerate(np.unique(graph_labels))}

    num_graphs = indicator.max() + 1
    graphs = []
    for gid in range(num_graphs):
        nodes = np.flatnonzero(indicator == gid)
        offset = nodes[0]
        n = len(nodes)
        if not np.array_equal(nodes, np.arange(offset, offset + n)):
            raise ValueError(f"nodes of graph {gid + 1} are not contiguous")
        adj = np.zeros((n, n))
        sel = (indicator[edges[:, 0]] == gid)
        for i, j in edges[sel] - offset:
            if i != j:
                adj[i, j] = adj[j, i] = 1.0
        graphs.append(Graph(adj, x_all[nodes], label_values[graph_labels[gid]]))
    return graphs


# ---------------------------------------------------------------- synthetic data


def has_motif(adjacency: np.ndarray, motif: str) -> bool:
    """Exhaustive search for a triangle / 4-clique subgraph."""
    size = MOTIF_SIZES[motif]
    adj = np.asarray(adjacency) != 0
    n = adj.shape[0]
    # only nodes with enough neighbours can sit in the clique
    cand = [v for v in range(n) if adj[v].sum() >= size - 1]
    for combo in itertools.combinations(cand, size):
        if all(adj[a, b] for a, b in itertools.combinations(combo, 2)):
            return True
    return False


def plant_motif(adjacency: np.ndarray, nodes: Sequence[int]) -> np.ndarray:
    adj = np.array(adjacency, dtype=np.float64, copy=True)
    for a, b in itertools.combinations(nodes, 2):
        adj[a, b] = adj[b, a] = 1.0
    return adj


def degree_features(adjacency: np.ndarray, d: int) -> np.ndarray:
    """One-hot node degree, clipped into the last of ``d`` channels."""
    deg = adjacency.sum(axis=1).astype(int)
    x = np.zeros((adjacency.shape[0], d))
    x[np.arange(len(deg)), np.minimum(deg, d - 1)] = 1.0
    return x


def _random_graph(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, 1)
    return (upper | upper.T).astype(np.float64)


def synth_motif_dataset(
    count: int,
    n_range: tuple[int, int] = (8, 20),
    d: int = 8,
    motif: str = "triangle",
    positive_fraction: float = 0.5,
    seed: int = 0,
    avg_degree: float = 1.0,
    max_retries: int = 1000,
) -> list[Graph]:
    """Sparse random graphs labelled by motif presence.

    Positives get the motif planted on random nodes; negatives are
    rejection-sampled until the exhaustive check finds no motif. Node
    features are one-hot degrees. ``n_range`` is inclusive.
    """
    if motif not in MOTIF_SIZES:
        raise ValueError(f"unknown motif {motif!r}")
    size = MOTIF_SIZES[motif]
    lo, hi = n_range
    if lo < size or hi < lo:
        raise ValueError(f"n_range {n_range} infeasible for motif {motif}")
    if not 0 < positive_fraction < 1:
        raise ValueError("positive_fraction must be in (0, 1)")
    if d < 2:
        raise ValueError("need d >= 2 for degree features")
    rng = np.random.default_rng(seed)
    n_pos = int(round(count * positive_fraction))
    labels = np.array([1] * n_pos + [0] * (count - n_pos))
    rng.shuffle(labels)
    graphs = []
    for y in labels:
        n = int(rng.integers(lo, hi + 1))
        p = min(1.0, avg_degree / max(n - 1, 1))
        if y == 1:
            adj = _random_graph(rng, n, p)
            adj = plant_motif(adj, rng.choice(n, size=size, replace=False))
        else:
            for _ in range(max_retries):
                adj = _random_graph(rng, n, p)
                if not has_motif(adj, motif):
                    break
            else:
                raise RuntimeError(f"could not sample a {motif}-free graph in {max_retries} tries")
        graphs.append(Graph(adj, degree_features(adj, d), int(y)))
    return graphs


# ---------------------------------------------------------------- splits and batches


@dataclass
class DatasetSplit:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int | None = None


def split_dataset(count: int, train_frac: float = 0.7, val_frac: float = 0.1, seed: int = 0) -> DatasetSplit:
    if not (0 < train_frac < 1 and 0 <= val_frac < 1 and train_frac + val_frac < 1):
        raise ValueError("split fractions must leave a nonempty test split")
    perm = np.random.default_rng(seed).permutation(count)
    n_train = int(round(train_frac * count))
    n_val = int(round(val_frac * count))
    return DatasetSplit(
        train=sorted(perm[:n_train].tolist()),
        val=sorted(perm[n_train : n_train + n_val].tolist()),
        test=sorted(perm[n_train + n_val :].tolist()),
        seed=seed,
    )


@dataclass
class Batch:
    adjacency: np.ndarray  # (B, N, N)
    features: np.ndarray  # (B, N, d)
    valid: np.ndarray  # (B, N) float 0/1
    labels: np.ndarray  # (B,)
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def n_nodes(self) -> np.ndarray:
        return self.valid.sum(axis=1).astype(int)


def collate(graphs: Sequence[Graph], index: Sequence[int] | None = None) -> Batch:
    if not graphs:
        raise ValueError("cannot collate an empty graph list")
    width = max(g.n for g in graphs)
    d = graphs[0].features.shape[1]
    B = len(graphs)
    adj = np.zeros((B, width, width))
    x = np.zeros((B, width, d))
    valid = np.zeros((B, width))
    for b, g in enumerate(graphs):
        adj[b, : g.n, : g.n] = g.adjacency
        x[b, : g.n] = g.features
        valid[b, : g.n] = 1.0
    labels = np.array([g.label for g in graphs], dtype=int)
    idx = np.arange(B) if index is None else np.asarray(index, dtype=int)
    return Batch(adj, x, valid, labels, idx)


def make_batches(
    graphs: Sequence[Graph],
    batch_size: int,
    shuffle_seed: int | np.random.Generator | None = None,
    index: Sequence[int] | None = None,
) -> list[Batch]:
    """Pad graphs into dense batches; ``index`` carries dataset positions."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    positions = np.arange(len(graphs)) if index is None else np.asarray(index, dtype=int)
    order = np.arange(len(graphs))
    if shuffle_seed is not None:
        rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) else np.random.default_rng(shuffle_seed)
        order = rng.permutation(len(graphs))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        batches.append(collate([graphs[i] for i in chunk], positions[chunk]))
    return batches
