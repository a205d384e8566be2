"""
Multi-relational graph attention over a bi-level graph.

Three relations feed each POI node: its POI neighbours in ``A_poi``, its
own prototype (1-hop) and the prototypes adjacent to that prototype in
``A_proto`` (2-hop). Each relation has its own projection ``W_r``; the
attention vector ``a1`` is shared. Messages are weighted by attention and
by the adjacency weight of the edge (the topology score).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NotANeighbor, ShapeMismatch
from .numerics import uniform_init

RELATIONS = ("poi", "proto1", "proto2")
_MASKED = -1e30


@dataclass
class RelationWeights:
    W_poi: ad.Tensor
    W_proto1: ad.Tensor
    W_proto2: ad.Tensor
    W_s: ad.Tensor
    a1: ad.Tensor

    @classmethod
    def register(cls, store, prefix, d2, d3, rng):
        return cls(
            store.add(f"{prefix}.W_poi", uniform_init(rng, (d3, d2), d2)),
            store.add(f"{prefix}.W_proto1", uniform_init(rng, (d3, d2), d2)),
            store.add(f"{prefix}.W_proto2", uniform_init(rng, (d3, d2), d2)),
            store.add(f"{prefix}.W_s", uniform_init(rng, (d3, d2), d2)),
            store.add(f"{prefix}.a1", uniform_init(rng, (2 * d3,), 2 * d3)),
        )

    @classmethod
    def from_arrays(cls, W_poi, W_proto1, W_proto2, W_s, a1):
        return cls(*(ad.Tensor(np.asarray(a, dtype=np.float64))
                     for a in (W_poi, W_proto1, W_proto2, W_s, a1)))

    def relation(self, r):
        return {"poi": self.W_poi, "proto1": self.W_proto1, "proto2": self.W_proto2}[r]


def relation_masks(graph, relations=RELATIONS):
    """Boolean neighbour masks per relation (POI x POI or POI x prototype)."""
    out = {}
    if "poi" in relations:
        m = graph.a_poi.data > 0
        np.fill_diagonal(m, False)
        out["poi"] = m
    if "proto1" in relations:
        out["proto1"] = graph.a_hier > 0
    if "proto2" in relations:
        reach = graph.a_hier @ (graph.a_proto.data > 0)
        out["proto2"] = (reach > 0) & ~(graph.a_hier > 0)
    return out


def relation_neighbors(graph, i, r):
    return np.flatnonzero(relation_masks(graph, (r,))[r][i])


def topology_score(graph, i, j, r):
    if j not in set(relation_neighbors(graph, i, r).tolist()):
        raise NotANeighbor(f"{j} is not a {r} neighbour of POI {i}")
    if r == "poi":
        return float(graph.a_poi.data[i, j])
    if r == "proto1":
        return float(graph.a_hier[i, j])
    p = int(graph.cluster[i])
    return float(graph.a_proto.data[p, j])


def topology_scores(graph, r):
    """Dense score matrix for relation ``r``; differentiable where learned."""
    if r == "poi":
        return graph.a_poi
    if r == "proto1":
        return ad.Tensor(graph.a_hier)
    # row i of A_hier @ A_proto is row p(i) of A_proto
    return ad.Tensor(graph.a_hier) @ graph.a_proto


def prototype_features(graph, E_id):
    """Member mean of POI ID embeddings for every cluster (K x d2)."""
    H = graph.a_hier
    counts = H.sum(axis=0)
    return ad.Tensor((H / np.where(counts > 0, counts, 1.0)).T) @ ad.as_tensor(E_id)


def attention(src, dst, a1, mask):
    """Masked softmax of ``LeakyReLU(a1 . [src_i || dst_j])`` over ``j``.

    Rows with no neighbour come back all-zero.
    """
    d3 = src.shape[1]
    left = src @ a1[:d3]
    right = dst @ a1[d3:]
    e = ad.leaky_relu(ad.reshape(left, (-1, 1)) + ad.reshape(right, (1, -1)))
    alpha = ad.softmax(ad.where(mask, e, _MASKED), axis=1)
    return alpha * mask


def propagate(graph, E_id, proto_features, w, relations=RELATIONS, return_attention=False):
    """One layer of multi-relational attention; returns POI representations N x d3."""
    E_id = ad.as_tensor(E_id)
    proto_features = ad.as_tensor(proto_features)
    if E_id.shape[0] != graph.N:
        raise ShapeMismatch("propagate", E_id.shape, graph.a_hier.shape)
    if proto_features.shape[0] != graph.K or proto_features.shape[1] != E_id.shape[1]:
        raise ShapeMismatch("propagate", proto_features.shape, (graph.K, E_id.shape[1]))
    masks = relation_masks(graph, relations)
    out = E_id @ w.W_s.T
    alphas = {}
    for r in relations:
        W = w.relation(r)
        src = E_id @ W.T
        dst = src if r == "poi" else proto_features @ W.T
        alpha = attention(src, dst, w.a1, masks[r])
        alphas[r] = alpha
        weight = alpha * ad.where(masks[r], topology_scores(graph, r), 0.0)
        out = out + weight @ dst
    if return_attention:
        return out, alphas
    return out
