"""Graph container and the non-learnable graph math."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    InvalidInputError,
    InvalidParameterError,
    InvalidSplitError,
    UndefinedMetricError,
)

DENSE_LIMIT = 4096


def _canonical_edges(edges, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise InvalidInputError(f"edge endpoint outside [0, {n})")
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if e.size:
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


@dataclass(eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` holds each undirected pair once as ``(i, j)`` with ``i < j``;
    self-loops and duplicates are dropped on construction.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    label: Optional[int] = None
    num_classes: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.n = int(self.n)
        self.edges = _canonical_edges(self.edges, self.n)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if self.features.shape[0] != self.n:
            raise InvalidInputError(
                f"feature rows ({self.features.shape[0]}) != node count ({self.n})"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise InvalidInputError("labels must have one entry per node")
            if self.num_classes is None:
                self.num_classes = int(self.labels.max()) + 1 if self.n else 0
            if self.n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise InvalidInputError(f"label ids must lie in [0, {self.num_classes})")

    @classmethod
    def from_adjacency(cls, adjacency, features, labels=None, **kw) -> "Graph":
        """Build from a (possibly directed) adjacency; directed input is symmetrised."""
        a = sp.coo_matrix(adjacency)
        if a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"adjacency must be square, got {a.shape}")
        csr = a.tocsr()
        if (abs(csr - csr.T) > 0).nnz:
            warnings.warn("directed adjacency symmetrised", stacklevel=2)
        edges = np.stack([a.row, a.col], axis=1)[a.data != 0]
        return cls(a.shape[0], edges, features, labels, **kw)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def adjacency(self) -> sp.csr_matrix:
        if "adjacency" not in self._cache:
            i, j = self.edges[:, 0], self.edges[:, 1]
            rows = np.concatenate([i, j])
            cols = np.concatenate([j, i])
            a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n, self.n))
            self._cache["adjacency"] = a
        return self._cache["adjacency"]

    def normalized_adjacency(self) -> sp.csr_matrix:
        if "norm" not in self._cache:
            self._cache["norm"] = normalize_adjacency(self)
        return self._cache["norm"]

    def structural_bias(self, k: int) -> "StructuralBias":
        key = ("bias", int(k))
        if key not in self._cache:
            self._cache[key] = adjacency_power(self.normalized_adjacency(), k)
        return self._cache[key]

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph(
            self.n,
            inv[self.edges],
            self.features[perm],
            None if self.labels is None else self.labels[perm],
            label=self.label,
            num_classes=self.num_classes,
        )


@dataclass(eq=False)
class StructuralBias:
    """The k-th power of the normalised adjacency, dense or CSR."""

    k: int
    matrix: object

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    @property
    def nnz_mask(self) -> list:
        return khop_mask(self)


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    """Symmetric normalisation of ``A + I``: entries ``(A+I)_ij / sqrt(d_i d_j)``."""
    a = g.adjacency + sp.identity(g.n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = a.tocoo()
    vals = coo.data * inv_sqrt[coo.row] * inv_sqrt[coo.col]
    return sp.csr_matrix((vals, (coo.row, coo.col)), shape=a.shape)


def adjacency_power(a_hat, k: int) -> StructuralBias:
    """Exact ``a_hat ** k`` by repeated multiplication; no thresholding."""
    if int(k) != k or k < 0:
        raise InvalidParameterError(f"hop count must be a non-negative integer, got {k}")
    k = int(k)
    n = a_hat.shape[0]
    a_sp = sp.csr_matrix(a_hat)
    if n <= DENSE_LIMIT:
        out = np.eye(n)
        for _ in range(k):
            out = np.asarray(a_sp @ out)
    else:
        out = sp.identity(n, format="csr")
        for _ in range(k):
            out = (a_sp @ out).tocsr()
    return StructuralBias(k, out)


def khop_mask(bias: StructuralBias) -> list:
    """Per-node sets of columns with a positive structural weight."""
    m = bias.matrix
    if sp.issparse(m):
        m = m.tocsr()
        return [
            set(m.indices[m.indptr[i] : m.indptr[i + 1]][m.data[m.indptr[i] : m.indptr[i + 1]] > 0].tolist())
            for i in range(m.shape[0])
        ]
    return [set(np.flatnonzero(row > 0).tolist()) for row in np.asarray(m)]


def homophily(g: Graph) -> float:
    """Fraction of undirected edges joining two nodes with the same label."""
    if g.labels is None:
        raise InvalidInputError("homophily needs node labels")
    if g.n_edges == 0:
        raise UndefinedMetricError("homophily is undefined on a graph without edges")
    y = g.labels
    same = y[g.edges[:, 0]] == y[g.edges[:, 1]]
    return float(same.mean())


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def __eq__(self, other):
        if not isinstance(other, Split):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.train, other.train)
            and np.array_equal(self.val, other.val)
            and np.array_equal(self.test, other.test)
        )

    def part(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise InvalidInputError(f"unknown split part {name!r}")
        return getattr(self, name)


def stratified_split(labels, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Split:
    """Per-class seeded shuffle; train and val sizes floored, remainder to test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise InvalidSplitError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < 3:
            raise InvalidSplitError(f"class {c} has {len(members)} members; at least 3 required")
        members = rng.permutation(members)
        n_train = math.floor(ratios[0] * len(members) + 1e-9)
        n_val = math.floor(ratios[1] * len(members) + 1e-9)
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train : n_train + n_val])
        parts[2].append(members[n_train + n_val :])
    train, val, test = (np.sort(np.concatenate(p)).astype(np.int64) for p in parts)
    return Split(train, val, test, seed)


def operator_norm(m, steps: int = 50, starts: int = 3, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm (largest over random starts)."""
    rng = np.random.default_rng(seed)
    n = m.shape[1]
    best = 0.0
    for _ in range(starts):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(steps):
            y = np.asarray(m.T @ (m @ x)).ravel()
            nrm = np.linalg.norm(y)
            if nrm == 0:
                break
            x = y / nrm
            est = float(np.linalg.norm(np.asarray(m @ x).ravel()))
        best = max(best, est)
    return best


def random_split(n: int, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Unstratified seeded shuffle of ``range(n)`` with the same floor rule."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise InvalidSplitError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if n < 1:
        raise InvalidSplitError("cannot split an empty index set")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    parts = perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
    return Split(*(np.sort(p).astype(np.int64) for p in parts), seed)
