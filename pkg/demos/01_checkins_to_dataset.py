"""From raw check-ins to a training-ready dataset.

We generate a planted check-in file, push it through the standard filters
(users with 20..50 check-ins, POIs visited by at least 10 users), split every
user's trajectory 80/20 in time, and build the two primitive POI views.
"""

import numpy as np

from bigsl.ingest import build_views, filter_dataset, split_train_test
from bigsl.synthetic import generate_checkins

checkins, labels = generate_checkins(seed=0, n_users=150, per_cluster=20)
print(f"raw: {len(checkins)} check-ins, first record:\n  {checkins[0].to_line()}")

ds = split_train_test(filter_dataset(checkins, min_user=20, max_user=50, min_poi_users=10))
s = ds.summary()
print(f"filtered: {s['users']} users, {s['pois']} POIs, {s['checkins']} check-ins, density {s['density']:.4f}")

seq = ds.index_sequences()[0]
print(f"user 0 visits {len(seq)} POIs; the first {ds.n_train[0]} are training history")

views = {v.view_id: v.X for v in build_views(ds)}
print("spatial view (min-max scaled lat/lon):", views["spatial"].shape)
print("temporal view (weekly slot histogram): ", views["temporal"].shape)

# every planted cluster is active in its own slots only
cluster = np.array([labels[p] for p in ds.pois])
for k in range(4):
    busy = np.flatnonzero(views["temporal"][cluster == k].sum(axis=0))
    print(f"cluster {k}: visited in slots {busy.tolist()}")
