"""Training the full model on planted data and scoring the test split.

The desk profile (32-dim, 4 prototypes) trains on one CPU core. After each
epoch the checkpoint could be written and resumed; here we only report the
loss and the ranking metrics at the end.
"""

import os
import tempfile
from dataclasses import replace

from bigsl.config import load_run_config
from bigsl.metrics import evaluate_model
from bigsl.synthetic import planted_dataset
from bigsl.train import Trainer, load_model

ds, _ = planted_dataset(0, n_users=150, per_cluster=20)
config, _ = load_run_config(profile="desk", env={})
config = replace(config, epochs=20)

trainer = Trainer(ds, config)
for record in trainer.fit():
    print(f"epoch {record['epoch']}: loss {record['loss']:.1f}, CE per sample {record['ce_per_sample']:.3f}")

report = evaluate_model(trainer.model, ds)
print("\n" + report.to_text())

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "checkpoint.bin")
    trainer.save(path)
    model, meta = load_model(path)
    same = evaluate_model(model, ds).to_dict() == report.to_dict()
    print(f"checkpoint at epoch {meta['epoch']} reloads to identical scores: {same}")
