"""Graph container, text-format ingestion, synthetic SBM graphs, and the
symmetric GCN adjacency normalization shared by every model in the project.

Dataset text format (one graph = four files):
  features: header line "N D_f", then N whitespace-separated feature rows
  edges:    header line "E", then E lines "u v" with 0-indexed endpoints
  labels:   N integers (whitespace/newline separated)
  masks:    N characters from {t, v, s, -} = train / val / test / unlabeled
Loaded bag-of-words features are row-normalized to unit sum; synthetic
features are used as-is.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .rng import Rng
from .sparse import SparseAdjacency


class FormatError(ValueError):
    pass


@dataclass
class Graph:
    n: int
    features: np.ndarray  # (N, D_f)
    adjacency: SparseAdjacency  # raw, symmetric, no self-loops
    labels: np.ndarray  # (N,) int, -1 for unlabeled
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for name in ("train_mask", "val_mask", "test_mask"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=bool))
        if self.features.shape[0] != self.n or self.labels.shape[0] != self.n:
            raise FormatError("feature/label row count does not match node count")
        if (self.train_mask & self.val_mask).any() or (self.train_mask & self.test_mask).any() or (
            self.val_mask & self.test_mask
        ).any():
            raise FormatError("train/val/test masks must be disjoint")

    @property
    def d_f(self) -> int:
        return self.features.shape[1]

    @property
    def d_c(self) -> int:
        return int(self.labels.max()) + 1


@dataclass
class NormalizedAdjacency:
    """D^{-1/2} (A + I) D^{-1/2} with cached scipy handle."""

    base: SparseAdjacency
    _pow2: SparseAdjacency | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.base.n


def normalize(adj: SparseAdjacency) -> NormalizedAdjacency:
    """Insert self-loops once and apply symmetric degree normalization."""
    a = adj.to_scipy()
    if (a != a.T).nnz != 0:
        raise FormatError("normalize expects a symmetric adjacency")
    a = a + sp.identity(adj.n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)  # self-loop guarantees deg >= 1
    d = sp.diags(inv_sqrt)
    return NormalizedAdjacency(SparseAdjacency.from_scipy(d @ a @ d))


def _read_tokens(path) -> list[str]:
    with open(path) as f:
        return f.read().split()


def load_graph(feature_file, edge_file, label_file, mask_file, row_normalize: bool = True) -> Graph:
    """Load a graph from the documented four-file text format."""
    with open(feature_file) as f:
        header = f.readline().split()
        if len(header) != 2:
            raise FormatError(f"{feature_file}:1: expected header 'N D_f'")
        n, d_f = int(header[0]), int(header[1])
        vals = f.read().split()
    if len(vals) != n * d_f:
        raise FormatError(
            f"{feature_file}: expected {n * d_f} feature values, found {len(vals)}"
        )
    features = np.array(vals, dtype=np.float64).reshape(n, d_f)
    if row_normalize:
        sums = features.sum(axis=1, keepdims=True)
        features = np.divide(features, sums, out=features.copy(), where=sums != 0)

    with open(edge_file) as f:
        lines = [ln.split() for ln in f if ln.strip()]
    if not lines or len(lines[0]) != 1:
        raise FormatError(f"{edge_file}:1: expected header 'E'")
    n_edges = int(lines[0][0])
    if len(lines) - 1 != n_edges:
        raise FormatError(
            f"{edge_file}:{len(lines)}: header says {n_edges} edges, found {len(lines) - 1}"
        )
    edges = np.array([[int(u), int(v)] for u, v in lines[1:]], dtype=np.int64).reshape(-1, 2)
    if edges.size:
        fwd = {(int(u), int(v)) for u, v in edges}
        missing = sum(1 for u, v in fwd if (v, u) not in fwd and u != v)
        if missing:
            warnings.warn(
                f"{edge_file}: {missing} edges had no stored reverse; auto-symmetrized"
            )
    adjacency = SparseAdjacency.from_edges(n, edges, symmetrize=True)

    labels = np.array(_read_tokens(label_file), dtype=np.int64)
    if labels.shape[0] != n:
        raise FormatError(f"{label_file}: expected {n} labels, found {labels.shape[0]}")

    chars = "".join(_read_tokens(mask_file))
    if len(chars) != n:
        raise FormatError(f"{mask_file}: expected {n} mask characters, found {len(chars)}")
    bad = set(chars) - set("tvs-")
    if bad:
        raise FormatError(f"{mask_file}: invalid mask characters {sorted(bad)}")
    marks = np.array(list(chars))
    return Graph(
        n=n,
        features=features,
        adjacency=adjacency,
        labels=labels,
        train_mask=marks == "t",
        val_mask=marks == "v",
        test_mask=marks == "s",
    )


def generate_sbm(
    n: int,
    classes: int,
    p_in: float,
    p_out: float,
    d_f: int,
    seed: int,
    feature_offset: float = 1.0,
) -> Graph:
    """Stochastic block model with class-conditional Gaussian features.

    Masks split 60/20/20 by a seeded permutation. Features are unit-variance
    Gaussians whose mean is `feature_offset` on the dimensions assigned to the
    node's class (round-robin over dimensions).
    """
    if n < classes or classes < 1:
        raise ValueError(f"degenerate SBM sizes: n={n}, classes={classes}")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError("edge probabilities must be in [0, 1]")
    rng = Rng(seed)
    labels = np.arange(n) % classes
    labels = labels[rng.permutation(n)]

    u = rng.uniform((n, n))
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(u < prob, k=1)
    rows, cols = np.nonzero(upper)
    adjacency = SparseAdjacency.from_edges(n, np.stack([rows, cols], axis=1))

    means = np.zeros((classes, d_f))
    for d in range(d_f):
        means[d % classes, d] = feature_offset
    features = rng.normal((n, d_f)) + means[labels]

    perm = rng.permutation(n)
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    train_mask = np.zeros(n, dtype=bool)
    val_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    train_mask[perm[:n_train]] = True
    val_mask[perm[n_train : n_train + n_val]] = True
    test_mask[perm[n_train + n_val :]] = True
    return Graph(n, features, adjacency, labels, train_mask, val_mask, test_mask)


def edge_homophily(graph: Graph) -> float:
    """Fraction of edges joining same-class endpoints."""
    adj = graph.adjacency
    rows = np.repeat(np.arange(adj.n), np.diff(adj.row_offsets))
    cols = adj.col_indices
    if rows.size == 0:
        return 0.0
    return float((graph.labels[rows] == graph.labels[cols]).mean())
