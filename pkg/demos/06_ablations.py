"""Switching components off one at a time.

Every variant is a pure configuration change of the same model, so for a
given seed they share the backbone initialisation and data order.
"""

from dataclasses import replace

from bigsl.config import load_run_config
from bigsl.metrics import ablation_table, run_ablations
from bigsl.synthetic import planted_dataset

ds, _ = planted_dataset(1, n_users=150, per_cluster=20)
config, _ = load_run_config(profile="desk", env={})
rows = run_ablations(ds, replace(config, epochs=15),
                     ("full", "no-hsl", "no-psl", "no-shar", "no-spec", "no-shar-spec", "backbone"),
                     log=lambda name, rep: print(f"trained {name}", flush=True))
print()
print(ablation_table(rows))
