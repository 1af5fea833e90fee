"""Dataset directories, the contextual SBM generator, and run exports.

Directory layout for a node dataset::

    edges.txt     "src dst" per line, 0-based, undirected
    features.txt  one whitespace-separated float row per node
    labels.txt    one integer class id per node

A graph dataset is a directory of such subdirectories (``labels.txt`` optional)
plus ``graph_labels.txt`` with one id per subdirectory in lexicographic order.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, InvalidInputError, InvalidParameterError
from .graph import Graph, Split, random_split, stratified_split

NODE_SPLIT = (0.6, 0.2, 0.2)
GRAPH_SPLIT = (0.8, 0.1, 0.1)


@dataclass(eq=False)
class NodeDataset:
    graph: Graph
    split: Split
    name: str = "dataset"

    @property
    def num_classes(self) -> int:
        return self.graph.num_classes


@dataclass(eq=False)
class GraphDataset:
    graphs: list
    split: Split
    name: str = "dataset"

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def __len__(self) -> int:
        return len(self.graphs)


# ---------------------------------------------------------------------------
# parsing


def _lines(path: Path) -> list:
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, encoding="utf-8") as fh:
        return [ln.split() for ln in fh if ln.strip()]


def _read_features(path: Path) -> np.ndarray:
    rows = _lines(path)
    if not rows:
        raise FormatError(f"{path}: no feature rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise FormatError(f"{path}:{i + 1}: expected {width} values, found {len(r)}")
    try:
        return np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _read_ints(path: Path, what: str) -> np.ndarray:
    rows = _lines(path)
    out = []
    for i, r in enumerate(rows):
        if len(r) != 1:
            raise FormatError(f"{path}:{i + 1}: expected a single {what}")
        try:
            out.append(int(r[0]))
        except ValueError:
            raise FormatError(f"{path}:{i + 1}: {r[0]!r} is not an integer") from None
    return np.array(out, dtype=np.int64)


def _read_edges(path: Path, n: int) -> np.ndarray:
    rows = _lines(path)
    edges = np.empty((len(rows), 2), dtype=np.int64)
    for i, r in enumerate(rows):
        if len(r) != 2:
            raise FormatError(f"{path}:{i + 1}: expected 'src dst'")
        try:
            a, b = int(r[0]), int(r[1])
        except ValueError:
            raise FormatError(f"{path}:{i + 1}: endpoints must be integers") from None
        if not (0 <= a < n and 0 <= b < n):
            raise FormatError(f"{path}:{i + 1}: endpoint outside [0, {n})")
        edges[i] = a, b
    return edges


def _read_graph(d: Path, with_labels: bool) -> Graph:
    x = _read_features(d / "features.txt")
    n = len(x)
    edges = _read_edges(d / "edges.txt", n)
    labels = None
    if with_labels or (d / "labels.txt").exists():
        labels = _read_ints(d / "labels.txt", "label")
        if len(labels) != n:
            raise FormatError(f"{d / 'labels.txt'}: {len(labels)} labels for {n} nodes")
        if labels.size and labels.min() < 0:
            raise FormatError(f"{d / 'labels.txt'}: negative class id")
    return Graph(n, edges, x, labels)


def read_graph_dir(dir_path, labels: bool = True) -> Graph:
    """Parse one graph directory without drawing a split."""
    return _read_graph(Path(dir_path), with_labels=labels)


def load_node_dataset(dir_path, ratios=NODE_SPLIT, seed: int = 0, num_classes: Optional[int] = None) -> NodeDataset:
    d = Path(dir_path)
    g = _read_graph(d, with_labels=True)
    if num_classes is not None:
        if g.labels.max() >= num_classes:
            raise FormatError(f"label id {g.labels.max()} outside [0, {num_classes})")
        g.num_classes = num_classes
    return NodeDataset(g, stratified_split(g.labels, ratios, seed), d.name)


def load_graph_dataset(dir_path, ratios=GRAPH_SPLIT, seed: int = 0) -> GraphDataset:
    d = Path(dir_path)
    labels = _read_ints(d / "graph_labels.txt", "graph label")
    subdirs = sorted(p for p in d.iterdir() if p.is_dir())
    if len(subdirs) != len(labels):
        raise FormatError(f"{len(labels)} graph labels for {len(subdirs)} graphs")
    if labels.size and labels.min() < 0:
        raise FormatError("negative graph label")
    graphs = []
    for sub, y in zip(subdirs, labels):
        if not any(sub.iterdir()):
            raise FormatError(f"{sub}: empty graph directory")
        try:
            g = _read_graph(sub, with_labels=False)
        except FileNotFoundError as exc:
            raise FormatError(str(exc)) from None
        g.label = int(y)
        graphs.append(g)
    return GraphDataset(graphs, random_split(len(graphs), ratios, seed), d.name)


# ---------------------------------------------------------------------------
# writing


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    _atomic_write(Path(path), json.dumps(obj, indent=2) + "\n")


def write_tsv(path, header, rows) -> None:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(v) for v in row) for row in rows]
    _atomic_write(Path(path), "\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_graph_dir(g: Graph, dir_path, labels: bool = True) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    _atomic_write(d / "edges.txt", "".join(f"{a} {b}\n" for a, b in g.edges))
    _atomic_write(d / "features.txt", "".join(" ".join(map(_fmt, r)) + "\n" for r in g.features))
    if labels and g.labels is not None:
        _atomic_write(d / "labels.txt", "".join(f"{y}\n" for y in g.labels))


def write_node_dataset(ds: NodeDataset, dir_path) -> None:
    write_graph_dir(ds.graph, dir_path)


def write_graph_dataset(ds: GraphDataset, dir_path) -> None:
    d = Path(dir_path)
    width = max(4, len(str(len(ds.graphs))))
    for i, g in enumerate(ds.graphs):
        write_graph_dir(g, d / f"g{i:0{width}d}")
    _atomic_write(d / "graph_labels.txt", "".join(f"{g.label}\n" for g in ds.graphs))


# ---------------------------------------------------------------------------
# synthetic data


def generate_csbm(
    n: int,
    num_classes: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_signal: float,
    seed: int = 0,
    ratios=NODE_SPLIT,
) -> NodeDataset:
    """Contextual stochastic block model with balanced classes.

    Intra-class pairs connect with ``p_in``, inter-class with ``p_out``. Node
    features are a class mean (standard Gaussian times ``feat_signal``) plus
    unit Gaussian noise. Expected homophily is
    ``p_in / (p_in + (num_classes - 1) * p_out)`` for large ``n``.
    """
    for name, p in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= p <= 1.0:
            raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")
    if num_classes < 1 or feat_dim < 1:
        raise InvalidParameterError("num_classes and feat_dim must be >= 1")
    if n < 3 * num_classes:
        raise InvalidParameterError(f"need n >= 3 * num_classes, got n={n}")
    graph_ss, feat_ss, split_ss = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(graph_ss)
    labels = rng.permutation(np.arange(n) % num_classes)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    frng = np.random.default_rng(feat_ss)
    means = feat_signal * frng.standard_normal((num_classes, feat_dim))
    x = means[labels] + frng.standard_normal((n, feat_dim))

    g = Graph(n, edges, x, labels, num_classes=num_classes)
    split_seed = int(np.random.default_rng(split_ss).integers(2**31))
    return NodeDataset(g, stratified_split(labels, ratios, split_seed), f"csbm-{seed}")


# ---------------------------------------------------------------------------
# run exports


def export_run(history, attention_snapshots, representations, out_path) -> None:
    """Write ``metrics.json``, ``attention_node_<id>.tsv`` and ``representations.tsv``.

    ``attention_snapshots`` maps node id to an ``(heads, n)`` array of that
    node's attention row; ``representations`` is ``(n, d)`` or ``None``.
    """
    out = Path(out_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    write_json(out / "metrics.json", history.records())
    for node_id, rows in (attention_snapshots or {}).items():
        write_attention_tsv(out / f"attention_node_{node_id}.tsv", rows)
    if representations is not None:
        write_representations_tsv(out / "representations.tsv", representations)


def write_attention_tsv(path, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    body = [
        (h, j, _fmt(v)) for h in range(rows.shape[0]) for j, v in enumerate(rows[h])
    ]
    write_tsv(path, ("head", "target_node_id", "attention_value"), body)


def read_attention_tsv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["head", "target_node_id", "attention_value"]:
            raise FormatError(f"{path}: unexpected header {header}")
        recs = [ln.rstrip("\n").split("\t") for ln in fh if ln.strip()]
    heads = max(int(r[0]) for r in recs) + 1
    n = max(int(r[1]) for r in recs) + 1
    out = np.zeros((heads, n))
    for h, j, v in recs:
        out[int(h), int(j)] = float(v)
    return out


def write_representations_tsv(path, reps) -> None:
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2:
        raise InvalidInputError("representations must be a 2-D array")
    header = ["node_id"] + [f"dim_{j}" for j in range(reps.shape[1])]
    write_tsv(path, header, ([i] + [_fmt(v) for v in row] for i, row in enumerate(reps)))
