"""Ranking metrics, next-new filtering and the ablation harness."""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .config import ABLATIONS, apply_ablation
from .errors import ShapeMismatch
from .model import test_passes

KS = (1, 5, 10, 20)


def target_ranks(scores, targets):
    """1-based rank of each target; ties go to the lower POI index.

    A POI outranks the target when its score is higher, or equal with a
    smaller index.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64)
    if scores.shape[0] != targets.shape[0]:
        raise ShapeMismatch("target_ranks", scores.shape, targets.shape)
    t_score = scores[np.arange(len(targets)), targets][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    better = (scores > t_score) | ((scores == t_score) & (cols < targets[:, None]))
    return better.sum(axis=1) + 1


def ranking(scores):
    """POI indices in recommendation order (descending score, ascending index)."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.shape[-1]), -scores))


def acc_at_k(ranks, K):
    ranks = np.asarray(ranks)
    return float(np.mean(ranks <= K)) if ranks.size else float("nan")


def mrr(ranks):
    # fsum keeps the result independent of sample order
    ranks = np.asarray(ranks, dtype=np.float64)
    return math.fsum(1.0 / ranks) / ranks.size if ranks.size else float("nan")


def next_new_mask(users, targets, train_histories):
    """True for samples whose target the user never visited in training."""
    seen = [set(int(x) for x in h) for h in train_histories]
    return np.array([int(t) not in seen[int(u)] for u, t in zip(users, targets)], dtype=bool)


@dataclass
class EvalReport:
    acc_at: dict
    mrr: float
    sample_count: int
    n2_acc_at: Optional[dict] = None
    n2_mrr: Optional[float] = None
    n2_sample_count: int = 0
    n2_defined: bool = False
    extra: dict = field(default_factory=dict)

    def records(self):
        """Flat ``(name, value)`` pairs, one per metric."""
        out = [(f"Acc@{k}", self.acc_at[k]) for k in sorted(self.acc_at)]
        out.append(("MRR", self.mrr))
        out.append(("samples", self.sample_count))
        if self.n2_defined:
            out.extend((f"N2-Acc@{k}", self.n2_acc_at[k]) for k in sorted(self.n2_acc_at))
            out.append(("N2-MRR", self.n2_mrr))
        else:
            out.extend((f"N2-Acc@{k}", "undefined") for k in KS)
            out.append(("N2-MRR", "undefined"))
        out.append(("N2-samples", self.n2_sample_count))
        return out

    def to_text(self):
        lines = []
        for name, value in self.records():
            value = f"{value:.6f}" if isinstance(value, float) else str(value)
            lines.append(f"{name}\t{value}\n")
        return "".join(lines)

    def to_dict(self):
        d = asdict(self)
        d["acc_at"] = {str(k): v for k, v in self.acc_at.items()}
        if self.n2_acc_at is not None:
            d["n2_acc_at"] = {str(k): v for k, v in self.n2_acc_at.items()}
        return d


def report_from_ranks(ranks, n2_mask=None, ks=KS):
    ranks = np.asarray(ranks)
    rep = EvalReport({k: acc_at_k(ranks, k) for k in ks}, mrr(ranks), int(ranks.size))
    if n2_mask is not None:
        sub = ranks[np.asarray(n2_mask, dtype=bool)]
        rep.n2_sample_count = int(sub.size)
        if sub.size:
            rep.n2_defined = True
            rep.n2_acc_at = {k: acc_at_k(sub, k) for k in ks}
            rep.n2_mrr = mrr(sub)
    return rep


def evaluate_scores(scores, targets, users=None, train_histories=None):
    ranks = target_ranks(scores, targets)
    mask = None
    if users is not None and train_histories is not None:
        mask = next_new_mask(users, targets, train_histories)
    return report_from_ranks(ranks, mask)


def evaluate_model(model, dataset, split="test"):
    """Score every test sample of ``dataset`` with ``model``."""
    seqs = dataset.index_sequences()
    if split == "test":
        passes = test_passes(seqs, dataset.n_train, model.config.max_seq_len)
    else:
        from .model import training_passes
        passes = training_passes(seqs, dataset.n_train, model.config.max_seq_len)
    scores, targets = model.score(passes)
    users = np.concatenate([np.full(p.n_samples, p.user) for p in passes])
    histories = [s[:n] for s, n in zip(seqs, dataset.n_train)]
    return evaluate_scores(scores, targets, users, histories)


def write_report(path, run_id, report):
    """Merge ``report`` into a JSON file keyed by run id."""
    from .storage import atomic_write_bytes
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        data = {}
    data[run_id] = report.to_dict()
    atomic_write_bytes(path, (json.dumps(data, sort_keys=True, indent=1) + "\n").encode("utf-8"))


def run_ablations(dataset, base_config, variants=ABLATIONS, views=None, log=None):
    """Train and evaluate each variant with shared seed and data."""
    from .train import Trainer
    rows = {}
    for name in variants:
        cfg = apply_ablation(base_config, name)
        trainer = Trainer(dataset, cfg, views)
        trainer.fit()
        rows[name] = evaluate_model(trainer.model, dataset)
        if log is not None:
            log(name, rows[name])
    return rows


def ablation_table(rows, ks=(5, 10, 20)):
    header = "variant\t" + "\t".join(f"Acc@{k}" for k in ks) + "\tMRR\n"
    body = "".join(
        f"{name}\t" + "\t".join(f"{rep.acc_at[k]:.4f}" for k in ks) + f"\t{rep.mrr:.4f}\n"
        for name, rep in rows.items())
    return header + body
