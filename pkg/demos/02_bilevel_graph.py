"""Learning a bi-level graph for one view.

A small MLP maps view features to unit-norm structure embeddings. Cosine
similarity, epsilon/top-k sparsification and row normalisation give the
POI-level graph. K-Means on the embeddings gives prototypes, the hierarchy
matrix and a prototype-level graph. The prototype loss pulls embeddings
toward their assigned prototype.
"""

import numpy as np

from bigsl.ingest import build_views
from bigsl.numerics import Adam, ParameterStore, gradient
from bigsl.structure import (
    GslHyperParams,
    GslTransform,
    build_bilevel_graph,
    hsl_loss,
    kmeans_estep,
    structure_embed,
)
from bigsl.synthetic import planted_dataset

ds, labels = planted_dataset(0, n_users=150, per_cluster=20)
X = {v.view_id: v.X for v in build_views(ds)}["spatial"]
truth = np.array([labels[p] for p in ds.pois])

rng = np.random.default_rng(0)
store = ParameterStore()
t_poi = GslTransform.register(store, "poi", X.shape[1], 16, rng)
t_proto = GslTransform.register(store, "proto", 16, 16, rng)
hyper = GslHyperParams(K=4, epsilon=0.5, top_k=10)

protos = kmeans_estep(structure_embed(X, t_poi).data, K=4, rng=rng)
opt = Adam(store, lr=1e-2)
for step in range(30):
    if step % 10 == 0:
        protos = kmeans_estep(structure_embed(X, t_poi).data, protos)  # E-step
    loss = hsl_loss(structure_embed(X, t_poi), protos, tau1=0.1)     # M-step
    opt.step(gradient(loss, store))
    if step % 10 == 9:
        print(f"step {step + 1}: prototype loss {loss.item():.3f}")

g = build_bilevel_graph(X, t_poi, t_proto, protos, hyper)
print(f"\nN={g.N} POIs, {g.E1} POI-POI edges, {g.E2} POI-prototype edges, {g.E3} prototype edges")
print("row sums of A_poi:", np.unique(np.round(g.a_poi.data.sum(axis=1), 12)))
for k in range(4):
    members = truth[protos.assignments == k]
    print(f"prototype {k}: {members.size} POIs, planted clusters {np.bincount(members, minlength=4).tolist()}")
