"""
Per-view bi-level graph structure learning.

Each feature view owns two small MLP transforms. The POI transform maps
primitive features to unit-norm structure embeddings whose cosine
similarities, after sparsification, form the POI-POI adjacency. K-Means
over the structure embeddings (the E-step) yields prototypes and the
POI-prototype indicator; the prototype transform does the same pairwise
construction over the centroids.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import GraphInvariantError, TooFewPoints, ZeroVectorRow
from .numerics import uniform_init


@dataclass
class GslHyperParams:
    K: int = 80
    tau1: float = 0.1
    epsilon: float = 0.5
    top_k: int = 10
    estep_period: str = "epoch"

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.tau1 <= 0:
            raise ValueError("tau1 must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.estep_period not in ("epoch", "batch"):
            raise ValueError("estep_period must be 'epoch' or 'batch'")


@dataclass
class GslTransform:
    """``z = W2 sigmoid(W1 x + b1) + b2`` applied row-wise."""

    W1: ad.Tensor
    b1: ad.Tensor
    W2: ad.Tensor
    b2: ad.Tensor

    @classmethod
    def register(cls, store, prefix, d1, d2, rng):
        return cls(
            store.add(f"{prefix}.W1", uniform_init(rng, (d2, d1), d1)),
            store.add(f"{prefix}.b1", uniform_init(rng, (d2,), d1)),
            store.add(f"{prefix}.W2", uniform_init(rng, (d2, d2), d2)),
            store.add(f"{prefix}.b2", uniform_init(rng, (d2,), d2)),
        )

    @classmethod
    def from_arrays(cls, W1, b1, W2, b2):
        return cls(*(ad.Tensor(np.asarray(a, dtype=np.float64)) for a in (W1, b1, W2, b2)))


@dataclass
class PrototypeSet:
    centroids: np.ndarray
    assignments: np.ndarray

    @property
    def K(self):
        return self.centroids.shape[0]

    def counts(self):
        return np.bincount(self.assignments, minlength=self.K)


@dataclass
class BiLevelGraph:
    a_poi: ad.Tensor
    a_hier: np.ndarray
    a_proto: ad.Tensor
    prototypes: PrototypeSet
    z: Optional[ad.Tensor] = None

    @property
    def N(self):
        return self.a_hier.shape[0]

    @property
    def K(self):
        return self.a_hier.shape[1]

    @property
    def cluster(self):
        return self.prototypes.assignments

    @property
    def E1(self):
        return int(np.count_nonzero(self.a_poi.data))

    @property
    def E2(self):
        return int(np.count_nonzero(self.a_hier))

    @property
    def E3(self):
        return int(np.count_nonzero(self.a_proto.data))

    def check_invariants(self):
        N, K = self.N, self.K
        if not K < N:
            raise GraphInvariantError(f"need K < N, got K={K}, N={N}")
        if self.E2 != N:
            raise GraphInvariantError(f"E2={self.E2} differs from N={N}")
        if not self.E3 <= self.E1 <= N * N:
            raise GraphInvariantError(f"edge counts E1={self.E1}, E3={self.E3} violate E3 <= E1 <= N^2")


# --- pairwise structure -----------------------------------------------------

def _check_rows(t):
    norms = np.sqrt((t.data * t.data).sum(axis=1))
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ZeroVectorRow(f"rows with zero norm: {bad[:10].tolist()}")


def structure_embed(X, t):
    """Unit-norm structure embeddings of the rows of ``X``."""
    X = ad.as_tensor(X)
    hidden = ad.sigmoid(X @ t.W1.T + t.b1)
    z = hidden @ t.W2.T + t.b2
    _check_rows(z)
    return ad.l2_normalize(z, axis=1)


def pairwise_adjacency(Z):
    Z = ad.as_tensor(Z)
    _check_rows(Z)
    return ad.cosine_matrix(Z, Z)


def sparsify_mask(S, epsilon, top_k):
    """Boolean mask of the entries kept by :func:`sparsify_normalize`."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    order = np.argsort(-off, axis=1, kind="stable")
    ranked = np.zeros_like(S, dtype=bool)
    k = min(top_k, max(n - 1, 0))
    if k:
        np.put_along_axis(ranked, order[:, :k], True, axis=1)
    mask = ranked & (S >= epsilon) & (S > 0)
    diag = np.arange(n)
    mask[diag, diag] = S[diag, diag] > 0
    return mask


def sparsify_normalize(S, epsilon=0.5, top_k=10):
    """Epsilon / top-k sparsification followed by row-stochastic scaling.

    Per row the self-loop is kept together with the off-diagonal entries
    that are both at least ``epsilon`` and among the ``top_k`` largest
    off-diagonal values (ties go to the lower column). Non-positive
    entries never survive. A row left empty becomes an identity row.
    """
    S = ad.as_tensor(S)
    mask = sparsify_mask(S.data, epsilon, top_k)
    kept = ad.where(mask, S, 0.0)
    rowsum = kept.sum(axis=1, keepdims=True)
    empty = rowsum.data[:, 0] <= 0
    if empty.any():
        eye = np.eye(S.shape[0])
        safe = ad.where(empty[:, None], 1.0, rowsum)
        return ad.where(empty[:, None], eye, kept / safe)
    return kept / rowsum


# --- hierarchical structure ---------------------------------------------------

def squared_distances(Z, C):
    Z = np.asarray(Z, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    return np.maximum((Z * Z).sum(1)[:, None] - 2.0 * Z @ C.T + (C * C).sum(1)[None, :], 0.0)


def kmeanspp_init(Z, K, rng):
    Z = np.asarray(Z, dtype=np.float64)
    N = Z.shape[0]
    centers = [int(rng.integers(N))]
    d2 = squared_distances(Z, Z[centers])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        nxt = int(rng.choice(N, p=d2 / total)) if total > 0 else int(rng.integers(N))
        centers.append(nxt)
        d2 = np.minimum(d2, squared_distances(Z, Z[[nxt]])[:, 0])
    return Z[centers].copy()


def wcss(Z, prototypes):
    Z = np.asarray(Z, dtype=np.float64)
    diff = Z - prototypes.centroids[prototypes.assignments]
    return float((diff * diff).sum())


def kmeans_estep(Z, state=None, K=None, rng=None):
    """One K-Means assign + update round.

    With no ``state`` the centroids are seeded by k-means++ from ``rng``.
    Points go to the nearest centroid (ties to the lower index); centroids
    become member means. An empty cluster takes over the point farthest
    from its own centroid.
    """
    Z = np.asarray(Z, dtype=np.float64)
    N = Z.shape[0]
    if state is None:
        if K is None:
            raise ValueError("K is required for the first E-step")
        if K > N:
            raise TooFewPoints(f"K={K} exceeds N={N}")
        centroids = kmeanspp_init(Z, K, rng if rng is not None else np.random.default_rng(0))
    else:
        centroids = state.centroids
        K = centroids.shape[0]
        if K > N:
            raise TooFewPoints(f"K={K} exceeds N={N}")
    dist = squared_distances(Z, centroids)
    assign = np.argmin(dist, axis=1)
    own = dist[np.arange(N), assign]
    counts = np.bincount(assign, minlength=K)
    taken = np.zeros(N, dtype=bool)
    for k in np.flatnonzero(counts == 0):
        # donors must leave a non-empty cluster behind
        cand = np.where(~taken & (counts[assign] > 1), own, -np.inf)
        j = int(np.argmax(cand))
        counts[assign[j]] -= 1
        assign[j] = k
        counts[k] = 1
        own[j] = 0.0
        taken[j] = True
    new = np.zeros((K, Z.shape[1]))
    np.add.at(new, assign, Z)
    new /= counts[:, None]
    return PrototypeSet(new, assign)


def normalized_centroids(centroids):
    C = np.asarray(centroids, dtype=np.float64)
    norms = np.sqrt((C * C).sum(axis=1, keepdims=True))
    return C / np.where(norms > 0, norms, 1.0)


def hsl_loss(Z, prototypes, tau1):
    """Prototype-assignment loss: summed cross-entropy of ``z . c / tau1``.

    Centroids are constants here; gradients reach ``Z`` only.
    """
    Z = ad.as_tensor(Z)
    C = normalized_centroids(prototypes.centroids)
    logp = ad.log_softmax(Z @ C.T * (1.0 / tau1), axis=1)
    picked = logp[np.arange(Z.shape[0]), prototypes.assignments]
    return -picked.sum()


def hier_matrix(assignments, K):
    A = np.zeros((len(assignments), K))
    A[np.arange(len(assignments)), assignments] = 1.0
    return A


def prototype_adjacency(centroids, t2, epsilon=0.5, top_k=10):
    Ct = structure_embed(centroids, t2)
    return sparsify_normalize(pairwise_adjacency(Ct), epsilon, top_k)


def build_bilevel_graph(X, t_poi, t_proto, prototypes, hyper, check=True):
    """Assemble the three adjacencies of one view from current parameters."""
    Z = structure_embed(X, t_poi)
    a_poi = sparsify_normalize(pairwise_adjacency(Z), hyper.epsilon, hyper.top_k)
    a_proto = prototype_adjacency(prototypes.centroids, t_proto, hyper.epsilon, hyper.top_k)
    graph = BiLevelGraph(a_poi, hier_matrix(prototypes.assignments, prototypes.K),
                         a_proto, prototypes, Z)
    if check:
        graph.check_invariants()
    return graph


# --- rule-based substitute ------------------------------------------------------

def _safe_cosine(X):
    X = np.asarray(X, dtype=np.float64)
    norms = np.sqrt((X * X).sum(axis=1, keepdims=True))
    U = X / np.where(norms > 0, norms, 1.0)
    S = U @ U.T
    np.fill_diagonal(S, 1.0)
    return S


def rule_poi_adjacency(view_id, X, radius=0.1, top_k=10):
    """Fixed POI graph: spatial radius neighbours or temporal cosine top-k."""
    X = np.asarray(X, dtype=np.float64)
    if view_id == "spatial":
        d = np.sqrt(squared_distances(X, X))
        S = np.where(d <= radius, 1.0 - d / (2 * radius) if radius > 0 else 1.0, 0.0)
        np.fill_diagonal(S, 1.0)
        return sparsify_normalize(S, 1e-12, top_k).data
    return sparsify_normalize(_safe_cosine(X), 1e-12, top_k).data


def rule_bilevel_graph(view_id, X, prototypes, hyper, radius=0.1, check=True):
    """Bi-level graph from pre-defined rules; nothing here is trainable."""
    a_poi = ad.Tensor(rule_poi_adjacency(view_id, X, radius, hyper.top_k))
    a_proto = ad.Tensor(sparsify_normalize(_safe_cosine(prototypes.centroids),
                                           hyper.epsilon, hyper.top_k).data)
    graph = BiLevelGraph(a_poi, hier_matrix(prototypes.assignments, prototypes.K),
                         a_proto, prototypes, None)
    if check:
        graph.check_invariants()
    return graph
