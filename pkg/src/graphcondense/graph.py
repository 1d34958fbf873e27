"""Sparse graph container, normalization, neighbour sampling and statistics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import ndtape
from .errors import DimensionError, ValidationError
from .ndtape import Tensor


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """CSR adjacency plus node features, labels and split masks.

    ``labels`` uses -1 for unlabeled nodes.  Features are kept as a dense
    array; ``features_matrix`` hands out a CSR copy when they are sparse
    enough for that to pay off in products.
    """

    adj: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    name: str = "graph"
    directed: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        adj = sp.csr_matrix(self.adj, dtype=np.float64)
        adj.sum_duplicates()
        adj.sort_indices()
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise DimensionError(f"adjacency must be square, got {adj.shape}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DimensionError(f"features have shape {self.features.shape}, expected ({n}, d)")
        if self.labels.shape != (n,):
            raise DimensionError(f"labels have shape {self.labels.shape}, expected ({n},)")
        for name in ("train_mask", "val_mask", "test_mask"):
            m = np.asarray(getattr(self, name), dtype=bool)
            if m.shape != (n,):
                raise DimensionError(f"{name} has shape {m.shape}, expected ({n},)")
            object.__setattr__(self, name, m)
        if np.any(self.train_mask & self.val_mask) or np.any(self.train_mask & self.test_mask) \
                or np.any(self.val_mask & self.test_mask):
            raise ValidationError("train/val/test masks overlap")

    @property
    def n(self):
        return self.adj.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_classes(self):
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if lab.size else 0

    @property
    def row_ptr(self):
        return self.adj.indptr

    @property
    def col_idx(self):
        return self.adj.indices

    @property
    def values(self):
        return self.adj.data

    @property
    def train_idx(self):
        return np.flatnonzero(self.train_mask)

    @property
    def val_idx(self):
        return np.flatnonzero(self.val_mask)

    @property
    def test_idx(self):
        return np.flatnonzero(self.test_mask)

    @property
    def features_matrix(self):
        """Features as CSR when under 10% dense, else the dense array."""
        if "fm" not in self._cache:
            f = self.features
            dens = np.count_nonzero(f) / max(f.size, 1)
            self._cache["fm"] = sp.csr_matrix(f) if dens < 0.1 else f
        return self._cache["fm"]

    def num_edges(self):
        """Edges without self loops: stored arcs if directed, node pairs otherwise."""
        if self.directed:
            return int(self.adj.nnz - np.count_nonzero(self.adj.diagonal()))
        return int(sp.triu(self.adj, k=1).nnz)

    def is_symmetric(self, tol=0.0):
        d = self.adj - self.adj.T
        return d.nnz == 0 or np.abs(d.data).max() <= tol

    def with_adj(self, adj):
        return replace(self, adj=adj, _cache={})

    def class_counts(self, mask=None):
        mask = self.train_mask if mask is None else mask
        lab = self.labels[mask]
        return np.bincount(lab[lab >= 0], minlength=self.num_classes)


def normalized_adjacency(adj, add_self_loops=True):
    """D^-1/2 (A [+ I]) D^-1/2 for a scipy sparse or dense ndarray adjacency."""
    dense = isinstance(adj, np.ndarray)
    a = np.asarray(adj, dtype=np.float64) if dense else sp.csr_matrix(adj, dtype=np.float64)
    vals = a if dense else a.data
    if np.any(vals < 0):
        raise ValidationError("adjacency weights must be nonnegative")
    n = a.shape[0]
    if add_self_loops:
        a = a + (np.eye(n) if dense else sp.identity(n, format="csr"))
    deg = np.asarray(a.sum(axis=1)).ravel()
    s = np.zeros(n)
    pos = deg > 0
    s[pos] = deg[pos] ** -0.5
    if dense:
        return s[:, None] * a * s[None, :]
    d = sp.diags(s)
    out = (d @ a @ d).tocsr()
    out.sort_indices()
    return out


def normalize_sym(graph: SparseGraph, add_self_loops=True) -> SparseGraph:
    return graph.with_adj(normalized_adjacency(graph.adj, add_self_loops))


def mean_aggregator(adj):
    """Row-normalized adjacency without self loops (neighbour mean)."""
    if isinstance(adj, np.ndarray):
        a = adj.copy()
        np.fill_diagonal(a, 0.0)
        deg = a.sum(axis=1, keepdims=True)
        return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)
    a = sp.csr_matrix(adj, dtype=np.float64)
    a = (a - sp.diags(a.diagonal())).tocsr()
    a.eliminate_zeros()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ a).tocsr()


def spmm(adj, dense: Tensor) -> Tensor:
    """Â·X with gradient flowing to ``dense``."""
    if isinstance(adj, SparseGraph):
        adj = adj.adj
    if not isinstance(dense, Tensor):
        dense = Tensor(dense)
    return ndtape.spmm(adj, dense)


@dataclass
class ClassBatch:
    class_id: int
    node_ids: np.ndarray
    neighbor_closure: np.ndarray

    @property
    def batch_size(self):
        return len(self.node_ids)


def sample_class_batch(graph: SparseGraph, class_id, batch_size, fanout, hops, rng) -> ClassBatch:
    """Train nodes of one class plus a fan-out capped ``hops``-hop neighbourhood.

    The closure lists the batch first, then newly reached nodes in discovery
    order, so ``closure[:len(node_ids)] == node_ids``.
    """
    if hops < 0:
        raise ValidationError("hops must be >= 0")
    pool = np.flatnonzero(graph.train_mask & (graph.labels == class_id))
    if pool.size == 0:
        raise ValidationError(f"class {class_id} has no training nodes")
    if batch_size >= pool.size:
        batch = pool.copy()
    else:
        batch = np.sort(rng.choice(pool, size=batch_size, replace=False))
    indptr, indices = graph.adj.indptr, graph.adj.indices
    seen = set(batch.tolist())
    closure = list(batch)
    frontier = batch
    for _ in range(hops):
        nxt = []
        for u in frontier:
            nb = indices[indptr[u]:indptr[u + 1]]
            nb = nb[nb != u]
            if fanout is not None and nb.size > fanout:
                nb = rng.choice(nb, size=fanout, replace=False)
            for v in nb.tolist():
                if v not in seen:
                    seen.add(v)
                    closure.append(v)
                    nxt.append(v)
        frontier = np.asarray(nxt, dtype=np.int64)
    return ClassBatch(int(class_id), batch.astype(np.int64), np.asarray(closure, dtype=np.int64))


def induced_subgraph(graph: SparseGraph, node_ids) -> SparseGraph:
    ids = np.asarray(node_ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError("node_ids must be a flat index list")
    if len(np.unique(ids)) != len(ids):
        raise ValidationError("node_ids contains duplicates")
    if ids.size and (ids.min() < 0 or ids.max() >= graph.n):
        raise ValidationError("node_ids out of range")
    sub = graph.adj[ids][:, ids]
    return SparseGraph(sub, graph.features[ids], graph.labels[ids], graph.train_mask[ids],
                       graph.val_mask[ids], graph.test_mask[ids], name=graph.name,
                       directed=graph.directed)


def graph_stats(adj, labels, binarize_at=0.5, num_features=0):
    """Edge count, sparsity, homophily and storage of a (weighted) graph.

    Edges are undirected pairs i<j with weight >= ``binarize_at``; self loops
    are ignored.  ``sparsity`` is the percentage of the n(n-1) ordered
    off-diagonal pairs that carry an edge.  Storage counts 4 bytes per
    feature value and 8 bytes per edge.
    """
    labels = np.asarray(labels)
    if sp.issparse(adj):
        a = sp.triu(sp.csr_matrix(adj), k=1).tocoo()
        keep = a.data >= binarize_at
        r, c = a.row[keep], a.col[keep]
    else:
        a = np.asarray(adj)
        r, c = np.nonzero(np.triu(a >= binarize_at, k=1))
    n = a.shape[0]
    edges = int(len(r))
    homophily = float(np.mean(labels[r] == labels[c])) if edges else 0.0
    pairs = n * (n - 1)
    sparsity = 100.0 * 2 * edges / pairs if pairs else 0.0
    storage = 4 * n * int(num_features) + 8 * edges
    return {
        "nodes": int(n),
        "edges": edges,
        "sparsity": sparsity,
        "homophily": homophily,
        "storage_bytes": int(storage),
        "storage_mb": storage / 2**20,
    }
