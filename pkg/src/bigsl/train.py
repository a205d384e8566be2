"""EM training loop, checkpoints and the per-epoch log."""

import json
import math

import numpy as np

from .config import TrainingConfig
from .errors import FormatError, NonFiniteLoss
from .ingest import build_views
from .model import BiGSLModel, batch_passes, training_passes
from .numerics import Adam, clip_grad_norm, gradient
from .storage import atomic_write_bytes, dumps_arrays, load_arrays, loads_arrays

CHECKPOINT_FORMAT = "bigsl-checkpoint"
CHECKPOINT_VERSION = 1


class Trainer:
    """Alternates K-Means E-steps with Adam M-steps over next-POI batches."""

    def __init__(self, dataset, config, views=None):
        if dataset.n_train is None:
            raise ValueError("dataset has no train/test split")
        self.dataset = dataset
        self.config = config
        if views is None:
            views = build_views(dataset, config.slots, config.views)
        self.view_features = {v.view_id: v.X for v in views}
        self.model = BiGSLModel(config, dataset.N, dataset.M, self.view_features)
        self.optimizer = Adam(self.model.params, lr=config.lr)
        self.sequences = dataset.index_sequences()
        self.passes = training_passes(self.sequences, dataset.n_train, config.max_seq_len)
        self.epoch = 0
        self.history = []

    def _epoch_rng(self, salt):
        return np.random.default_rng([self.config.seed, self.epoch, salt])

    def run_epoch(self):
        c, model = self.config, self.model
        batches = batch_passes(self.passes, c.batch_size, self._epoch_rng(0))
        neg_rng = self._epoch_rng(1)
        if c.estep_period == "epoch":
            model.estep()
        totals = {"loss": 0.0, "ce": 0.0, "hsl": 0.0, "sh": 0.0, "sp": 0.0}
        samples = 0
        for b, batch in enumerate(batches):
            if c.estep_period == "batch":
                model.estep()
            loss, parts = model.loss(batch, rng=neg_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(b, value)
            grads = gradient(loss, model.params)
            clip_grad_norm(grads, c.grad_clip)
            self.optimizer.step(grads)
            totals["loss"] += value
            for k in ("ce", "hsl", "sh", "sp"):
                totals[k] += parts[k]
            samples += parts["samples"]
        self.epoch += 1
        record = {"epoch": self.epoch, "batches": len(batches), "samples": samples}
        record.update({k: v / len(batches) for k, v in totals.items()})
        record["ce_per_sample"] = totals["ce"] / max(samples, 1)
        self.history.append(record)
        return record

    def fit(self, epochs=None, log_path=None, on_epoch=None):
        target = self.config.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            record = self.run_epoch()
            if log_path is not None:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            if on_epoch is not None:
                on_epoch(self, record)
        if self.model.uses_graph and not self.model.prototypes:
            self.model.estep()
        return self.history

    # checkpoints
    def checkpoint_bytes(self):
        m = self.model
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "adam_t": self.optimizer.t,
            "config": self.config.to_dict(),
            "N": m.N,
            "M": m.M,
            "views": m.view_ids,
            "history": self.history,
        }
        arrays = m.state_arrays()
        arrays.update(self.optimizer.state_arrays())
        return dumps_arrays(meta, arrays)

    def save(self, path):
        atomic_write_bytes(path, self.checkpoint_bytes())

    @classmethod
    def from_checkpoint(cls, dataset, path=None, payload=None, config=None):
        meta, arrays = loads_arrays(payload) if payload is not None else load_arrays(path)
        _check_meta(meta)
        cfg = config or config_from_meta(meta)
        views = _views_from_arrays(meta, arrays)
        trainer = cls(dataset, cfg, views=views)
        trainer.model.load_state_arrays(arrays)
        trainer.optimizer.load_state(meta["adam_t"], arrays)
        trainer.epoch = meta["epoch"]
        trainer.history = list(meta.get("history", []))
        return trainer


def _check_meta(meta):
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError("not a bigsl checkpoint (format/version mismatch)")


def config_from_meta(meta):
    return TrainingConfig(**meta["config"])


def _views_from_arrays(meta, arrays):
    from .ingest import FeatureView
    return [FeatureView(v, np.array(arrays[f"feature.{v}"])) for v in meta["views"]]


def load_model(path):
    """Rebuild a :class:`BiGSLModel` from a checkpoint without any dataset."""
    meta, arrays = load_arrays(path)
    _check_meta(meta)
    cfg = config_from_meta(meta)
    views = {v.view_id: v.X for v in _views_from_arrays(meta, arrays)}
    model = BiGSLModel(cfg, meta["N"], meta["M"], views)
    model.load_state_arrays(arrays)
    return model, meta


def train(dataset, config, views=None, log_path=None, resume=None):
    """Train from scratch (or continue from ``resume``) for ``config.epochs`` epochs."""
    if resume is not None:
        trainer = Trainer.from_checkpoint(dataset, resume, config=config)
    else:
        trainer = Trainer(dataset, config, views)
    trainer.fit(log_path=log_path)
    return trainer
