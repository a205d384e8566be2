"""Message passing over the three relations of a bi-level graph.

Each POI aggregates from its POI neighbours, its own prototype and the
prototypes adjacent to that prototype. Attention is normalised per relation
and scaled by the graph's topology weights.
"""

import numpy as np

from bigsl import autodiff as ad
from bigsl.gnn import RELATIONS, RelationWeights, propagate, prototype_features, relation_neighbors
from bigsl.numerics import ParameterStore
from bigsl.structure import BiLevelGraph, PrototypeSet, hier_matrix, sparsify_normalize

rng = np.random.default_rng(1)
N, K, d = 8, 3, 4
Z = rng.normal(size=(N, 3))
Z /= np.linalg.norm(Z, axis=1, keepdims=True)
assign = np.array([0, 0, 0, 1, 1, 2, 2, 2])
C = np.stack([Z[assign == k].mean(axis=0) for k in range(K)])
C /= np.linalg.norm(C, axis=1, keepdims=True)
g = BiLevelGraph(sparsify_normalize(Z @ Z.T, 0.2, 3), hier_matrix(assign, K),
                 sparsify_normalize(C @ C.T, -1.0, K), PrototypeSet(C, assign))

E = rng.normal(size=(N, d))
w = RelationWeights.register(ParameterStore(), "rel", d, d, rng)
out, alphas = propagate(g, E, prototype_features(g, E), w, return_attention=True)

i = 0
for r in RELATIONS:
    nbrs = relation_neighbors(g, i, r)
    print(f"POI {i}, relation {r:6s}: neighbours {nbrs.tolist()}, attention "
          f"{np.round(alphas[r].data[i, nbrs], 3).tolist()}")
print("propagated representation of POI 0:", np.round(out.data[0], 3))

# an isolated POI keeps only its self term plus prototype messages
g.a_poi = ad.Tensor(np.eye(N))
alone = propagate(g, E, prototype_features(g, E), w, relations=("poi",)).data
print("isolated, POI relation only == W_s l_i:", np.allclose(alone, E @ w.W_s.data.T))
