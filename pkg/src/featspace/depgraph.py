"""Feature dependency graph: pairwise correlation of binary features,
prototype selection by aggregate correlation, and a prototype-rooted forest
assigning every feature a bottleneck-optimal path cost.

The forest solves a multi-source widest-path problem on the correlation
graph: for each feature, the relevant path cost equals the maximum over all
simple paths from a prototype of the minimum edge weight along the path.
Widest-path bottlenecks coincide with bottlenecks along maximum-spanning-tree
paths, so the implementation builds one maximum spanning forest and walks it
once per prototype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import minimum_spanning_tree

from .corpus import Dataset
from .errors import ConfigurationError, DataError

__all__ = [
    "CorrelationMatrix",
    "FeatureForest",
    "pairwise_correlation",
    "select_primaries",
    "build_opf",
    "default_num_clusters",
    "ISOLATED_COST",
]

# Path cost assigned to features unreachable from every prototype; keeps the
# transform total on the input space while making their contribution negligible.
ISOLATED_COST = 1e-6

DENSE_CAP_DEFAULT = 4096
TOP_K_DEFAULT = 64


def default_num_clusters(d: int) -> int:
    """Default cluster count: about one cluster per twenty features."""
    return max(2, int(round(d / 20)))


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Symmetric matrix of absolute phi coefficients in [0, 1].

    Dense up to a configured dimensionality cap; above the cap only the
    strongest ``top_k`` neighbors per feature are kept (symmetrized), since
    bottleneck paths through near-zero edges never shape the forest.
    """

    d: int
    dense: np.ndarray | None
    sparse: sp.csr_matrix | None

    def __post_init__(self):
        if (self.dense is None) == (self.sparse is None):
            raise ConfigurationError("exactly one of dense/sparse storage required")

    @classmethod
    def from_dense(cls, values) -> "CorrelationMatrix":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DataError(f"correlation matrix must be square, got {values.shape}")
        if not np.allclose(values, values.T):
            raise DataError("correlation matrix must be symmetric")
        if values.min() < 0.0 or values.max() > 1.0:
            raise DataError("correlation magnitudes must lie in [0, 1]")
        return cls(values.shape[0], values.copy(), None)

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    def get(self, i: int, j: int) -> float:
        if self.dense is not None:
            return float(self.dense[i, j])
        return float(self.sparse[i, j])

    def aggregate_scores(self) -> np.ndarray:
        """Per-feature sum of correlations to all other features."""
        if self.dense is not None:
            return self.dense.sum(axis=1) - np.diag(self.dense)
        total = np.asarray(self.sparse.sum(axis=1)).ravel()
        return total - self.sparse.diagonal()

    def graph(self) -> sp.csr_matrix:
        """Adjacency for path computations: off-diagonal positive entries."""
        if self.dense is not None:
            adj = self.dense.copy()
            np.fill_diagonal(adj, 0.0)
            return sp.csr_matrix(adj)
        adj = self.sparse.tolil(copy=True)
        adj.setdiag(0.0)
        adj = adj.tocsr()
        adj.eliminate_zeros()
        return adj


def pairwise_correlation(
    train: Dataset,
    *,
    dense_cap: int = DENSE_CAP_DEFAULT,
    top_k: int = TOP_K_DEFAULT,
) -> CorrelationMatrix:
    """Absolute phi coefficient between every pair of binary features.

    For binary variables phi equals the Pearson correlation. Constant
    features correlate 0 with everything and carry a 0 diagonal; all other
    diagonal entries are 1.
    """
    if train.n_samples == 0:
        raise DataError("cannot correlate an empty dataset")
    d = train.n_features
    if d <= dense_cap:
        dense = _phi_block(train, np.arange(d))
        return CorrelationMatrix(d, dense, None)
    return CorrelationMatrix(d, None, _phi_topk(train, top_k))


def _phi_block(train: Dataset, rows_of_interest: np.ndarray) -> np.ndarray:
    """Dense |phi| between features in rows_of_interest and all features."""
    X = train.to_dense(np.float64)
    n = X.shape[0]
    ones = X.sum(axis=0)
    var = ones * (n - ones)
    co = X[:, rows_of_interest].T @ X
    cov = n * co - np.outer(ones[rows_of_interest], ones)
    denom = np.sqrt(np.outer(var[rows_of_interest], var))
    phi = np.zeros_like(cov)
    np.divide(np.abs(cov), denom, out=phi, where=denom > 0)
    np.clip(phi, 0.0, 1.0, out=phi)
    if rows_of_interest.size == X.shape[1]:
        phi = np.maximum(phi, phi.T)
        np.fill_diagonal(phi, (var > 0).astype(np.float64))
    return phi


def _phi_topk(train: Dataset, top_k: int) -> sp.csr_matrix:
    """Top-k-neighbors sparse |phi| computed in row blocks."""
    d = train.n_features
    X = train.to_dense(np.float64)
    n = X.shape[0]
    ones = X.sum(axis=0)
    var = ones * (n - ones)
    block = 512
    rows_idx: list[np.ndarray] = []
    cols_idx: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    for start in range(0, d, block):
        stop = min(start + block, d)
        sel = np.arange(start, stop)
        co = X[:, sel].T @ X
        cov = n * co - np.outer(ones[sel], ones)
        denom = np.sqrt(np.outer(var[sel], var))
        phi = np.zeros_like(cov)
        np.divide(np.abs(cov), denom, out=phi, where=denom > 0)
        np.clip(phi, 0.0, 1.0, out=phi)
        phi[np.arange(sel.size), sel] = 0.0  # defer diagonal
        k = min(top_k, d - 1)
        part = np.argpartition(phi, d - k, axis=1)[:, d - k :]
        for local, cols in enumerate(part):
            keep = cols[phi[local, cols] > 0]
            rows_idx.append(np.full(keep.size, start + local, dtype=np.int64))
            cols_idx.append(keep.astype(np.int64))
            vals.append(phi[local, keep])
    if rows_idx:
        r = np.concatenate(rows_idx)
        c = np.concatenate(cols_idx)
        v = np.concatenate(vals)
    else:
        r = c = np.empty(0, dtype=np.int64)
        v = np.empty(0)
    mat = sp.coo_matrix((v, (r, c)), shape=(d, d)).tocsr()
    mat = mat.maximum(mat.T)  # symmetric union of both directions
    diag = sp.diags((var > 0).astype(np.float64))
    return (mat + diag).tocsr()


def select_primaries(corr: CorrelationMatrix, m: int) -> list[int]:
    """The m features most correlated with all others.

    Ties break toward the lower feature index; the result is ordered by
    aggregate score descending.
    """
    if not 1 <= m <= corr.d:
        raise ConfigurationError(f"m={m} outside valid range 1..{corr.d}")
    scores = corr.aggregate_scores()
    order = np.lexsort((np.arange(corr.d), -scores))
    return [int(i) for i in order[:m]]


@dataclass(frozen=True, eq=False)
class FeatureForest:
    """Partition of all features into prototype-rooted clusters.

    ``cluster_of[f]`` is the cluster id of feature ``f`` and ``path_cost[f]``
    its bottleneck-optimal path cost to that cluster's prototype, in (0, 1].
    Prototypes carry cost exactly 1. Cluster ids follow the order of the
    prototype list the forest was built from.
    """

    m: int
    prototypes: np.ndarray
    cluster_of: np.ndarray
    path_cost: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prototypes", np.asarray(self.prototypes, dtype=np.int64))
        object.__setattr__(self, "cluster_of", np.asarray(self.cluster_of, dtype=np.int64))
        object.__setattr__(self, "path_cost", np.asarray(self.path_cost, dtype=np.float64))
        d = self.cluster_of.size
        if self.prototypes.size != self.m:
            raise DataError("prototype count disagrees with m")
        if self.path_cost.size != d:
            raise DataError("path_cost length disagrees with cluster assignment")
        if self.m and (self.cluster_of.min() < 0 or self.cluster_of.max() >= self.m):
            raise DataError("cluster id out of range")
        if d and not ((self.path_cost > 0.0) & (self.path_cost <= 1.0)).all():
            raise DataError("path costs must lie in (0, 1]")
        for cid, p in enumerate(self.prototypes):
            if self.cluster_of[p] != cid or self.path_cost[p] != 1.0:
                raise DataError(f"prototype {int(p)} not rooted in its own cluster")

    @property
    def d(self) -> int:
        return self.cluster_of.size

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == cluster_id)

    def to_json_dict(self) -> dict:
        clusters = []
        for cid in range(self.m):
            members = self.members(cid)
            clusters.append(
                {
                    "prototype": int(self.prototypes[cid]),
                    "members": [int(f) for f in members],
                    "costs": [float(self.path_cost[f]) for f in members],
                }
            )
        return {"m": self.m, "clusters": clusters}

    @classmethod
    def from_json_dict(cls, data: dict) -> "FeatureForest":
        try:
            m = int(data["m"])
            clusters = data["clusters"]
            total = sum(len(c["members"]) for c in clusters)
            cluster_of = np.full(total, -1, dtype=np.int64)
            path_cost = np.zeros(total, dtype=np.float64)
            prototypes = np.zeros(m, dtype=np.int64)
            for cid, c in enumerate(clusters):
                prototypes[cid] = int(c["prototype"])
                for f, w in zip(c["members"], c["costs"]):
                    cluster_of[int(f)] = cid
                    path_cost[int(f)] = float(w)
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise DataError(f"corrupt forest payload: {e}") from None
        if (cluster_of < 0).any():
            raise DataError("corrupt forest payload: clusters do not cover all features")
        return cls(m, prototypes, cluster_of, path_cost)


def build_opf(corr: CorrelationMatrix, primaries: list[int]) -> FeatureForest:
    """Attach every feature to the prototype reachable through the widest path.

    Each non-primary feature joins the cluster of the prototype whose best
    path to it has the largest minimum edge weight; that bottleneck becomes
    the feature's path cost. Ties between prototypes break toward the lower
    prototype feature index. Features unreachable from every prototype join
    the lowest-indexed prototype's cluster with cost ``ISOLATED_COST``.
    """
    if len(primaries) == 0:
        raise ConfigurationError("primaries must be non-empty")
    primaries = [int(p) for p in primaries]
    if len(set(primaries)) != len(primaries):
        raise ConfigurationError("primaries must be distinct")
    d = corr.d
    if min(primaries) < 0 or max(primaries) >= d:
        raise ConfigurationError("primary feature index out of range")

    adj = corr.graph()
    forest = minimum_spanning_tree(-adj)
    und = -(forest + forest.T)  # symmetric, positive weights
    und = und.tocsr()
    indptr, indices, data = und.indptr, und.indices, und.data

    m = len(primaries)
    bcost = np.zeros((m, d), dtype=np.float64)
    for cid, p in enumerate(primaries):
        cost = bcost[cid]
        cost[p] = np.inf
        stack = [(p, -1)]
        while stack:
            u, parent = stack.pop()
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if v == parent:
                    continue
                w = data[e]
                if w <= 0.0:
                    continue
                cost[v] = min(cost[u], w)
                stack.append((v, u))
        cost[p] = 1.0

    # Choose per-feature the best prototype; the rows are scanned in
    # ascending prototype feature index so argmax resolves ties correctly.
    proto_order = np.argsort(primaries, kind="stable")
    best_cost = bcost.max(axis=0)
    pick_sorted = bcost[proto_order].argmax(axis=0)
    cluster_of = proto_order[pick_sorted]
    path_cost = best_cost.copy()

    unreachable = best_cost <= 0.0
    if unreachable.any():
        cluster_of = np.where(unreachable, proto_order[0], cluster_of)
        path_cost = np.where(unreachable, ISOLATED_COST, path_cost)

    proto_arr = np.asarray(primaries, dtype=np.int64)
    cluster_of[proto_arr] = np.arange(m)
    path_cost[proto_arr] = 1.0
    return FeatureForest(m, proto_arr, cluster_of, path_cost)
