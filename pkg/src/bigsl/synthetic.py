"""
Planted-structure check-in generator.

POIs form spatial clusters. Inside a cluster every POI has a fixed
successor: the cluster is toured greedily nearest-neighbour first, so
movement is spatially local as in real check-in data. With probability
``1 - p_follow`` a user instead hops to one of the ``hop_neighbors``
spatially nearest POIs of the same cluster. Each cluster is visited only in
its own weekly time slots, so the temporal view carries the same grouping
as the spatial one.
"""

from datetime import datetime, timedelta, timezone

import numpy as np

from .ingest import CheckIn

EPOCH = datetime(2021, 1, 4, tzinfo=timezone.utc)  # a Monday


def planted_pois(rng, n_clusters=4, per_cluster=40, spread=0.004, separation=0.05):
    centres = np.array([(30.0 + separation * (k // 2), -97.0 + separation * (k % 2))
                        for k in range(n_clusters)])
    coords = np.concatenate([c + rng.normal(scale=spread, size=(per_cluster, 2)) for c in centres])
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    return coords, labels


def planted_transitions(rng, coords, labels, hop_neighbors=10):
    """Successor cycle per cluster and each POI's nearest same-cluster POIs."""
    N = len(labels)
    succ = np.zeros(N, dtype=np.int64)
    near = np.zeros((N, hop_neighbors), dtype=np.int64)
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        d = ((coords[members][:, None, :] - coords[members][None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(d, np.inf)
        near[members] = members[np.argsort(d, axis=1, kind="stable")[:, :hop_neighbors]]
        tour = [int(rng.integers(len(members)))]
        left = set(range(len(members))) - set(tour)
        while left:
            nxt = min(left, key=lambda j: (d[tour[-1], j], j))
            tour.append(nxt)
            left.remove(nxt)
        cycle = members[tour]
        succ[cycle] = np.roll(cycle, -1)
    return succ, near


def cluster_slots(n_clusters=4, slots=56, per_cluster=3):
    """Disjoint weekly slot sets, one per cluster."""
    step = slots // n_clusters
    return [list(range(k * step, k * step + per_cluster)) for k in range(n_clusters)]


def generate_checkins(seed=0, n_users=300, n_clusters=4, per_cluster=40,
                      p_follow=0.85, hop_neighbors=10, hop_decay=3.0, length=(20, 30), slots=56):
    """Synthetic check-ins plus the ground-truth cluster label of each POI.

    ``hop_decay`` makes hops prefer closer neighbours, with weight
    ``exp(-rank / hop_decay)``; ``None`` hops uniformly.
    """
    rng = np.random.default_rng(seed)
    coords, labels = planted_pois(rng, n_clusters, per_cluster)
    succ, near = planted_transitions(rng, coords, labels, hop_neighbors)
    hop_p = np.ones(hop_neighbors) if hop_decay is None else np.exp(-np.arange(hop_neighbors) / hop_decay)
    hop_p /= hop_p.sum()
    slot_sets = cluster_slots(n_clusters, slots)
    hours_per_slot = 24 // (slots // 7)
    out = []
    for m in range(n_users):
        home = m % n_clusters
        members = np.flatnonzero(labels == home)
        cur = int(rng.choice(members))
        n = int(rng.integers(length[0], length[1] + 1))
        for step in range(n):
            if step:
                cur = int(succ[cur]) if rng.random() < p_follow else int(near[cur, rng.choice(hop_neighbors, p=hop_p)])
            slot = int(rng.choice(slot_sets[home]))
            day, within = divmod(slot, slots // 7)
            ts = EPOCH + timedelta(weeks=step, days=day, hours=within * hours_per_slot,
                                   minutes=int(rng.integers(0, 60 * hours_per_slot)))
            out.append(CheckIn(f"u{m:04d}", f"p{cur:04d}", round(float(coords[cur, 0]), 6),
                               round(float(coords[cur, 1]), 6), ts))
    return out, {f"p{i:04d}": int(labels[i]) for i in range(len(labels))}


def planted_dataset(seed=0, **kwargs):
    """Generated check-ins pushed through the standard filter and split."""
    from .ingest import filter_dataset, split_train_test
    checkins, labels = generate_checkins(seed, **kwargs)
    ds = split_train_test(filter_dataset(checkins, min_user=20, max_user=50, min_poi_users=10))
    ds.meta["slots"] = kwargs.get("slots", 56)
    return ds, labels


def gaussian_blobs(rng, n_points=200, n_blobs=4, dim=8, scale=0.05):
    """Well-separated unit-norm blobs in structure-embedding space."""
    centres = np.eye(dim)[:n_blobs]
    labels = np.repeat(np.arange(n_blobs), n_points // n_blobs)
    pts = centres[labels] + rng.normal(scale=scale, size=(len(labels), dim))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, labels
