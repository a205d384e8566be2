"""
The LSTM backbone and the full model that feeds it graph-enriched POI
embeddings.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import EmptySequence, InvalidTarget
from .fusion import enrich_embedding, fuse_views, orthogonality_loss, shared_loss
from .gnn import RELATIONS, RelationWeights, prototype_features, propagate
from .numerics import ParameterStore, uniform_init
from .structure import (
    GslHyperParams,
    GslTransform,
    build_bilevel_graph,
    hsl_loss,
    kmeans_estep,
    rule_bilevel_graph,
    structure_embed,
)


# --- samples ------------------------------------------------------------------

@dataclass
class Pass:
    """One LSTM run over ``window`` emitting predictions at ``out_pos``."""

    user: int
    window: np.ndarray
    out_pos: np.ndarray
    targets: np.ndarray

    @property
    def n_samples(self):
        return len(self.targets)


def build_passes(user, seq, positions, max_len=50):
    """Group next-POI samples of one user into LSTM passes.

    A sample at position ``k`` predicts ``seq[k]`` from the prefix
    ``seq[:k]`` truncated to its last ``max_len`` items. Prefixes that start
    at the beginning of the sequence share a single pass.
    """
    positions = [int(k) for k in positions if k >= 1]
    short = [k for k in positions if k <= max_len]
    out = []
    if short:
        end = max(short)
        out.append(Pass(user, np.asarray(seq[:end], dtype=np.int64),
                        np.array([k - 1 for k in short]), np.array([seq[k] for k in short])))
    for k in positions:
        if k > max_len:
            out.append(Pass(user, np.asarray(seq[k - max_len:k], dtype=np.int64),
                            np.array([max_len - 1]), np.array([seq[k]])))
    return out


def training_passes(index_sequences, n_train, max_len=50):
    passes = []
    for m, seq in enumerate(index_sequences):
        passes.extend(build_passes(m, seq, range(1, n_train[m]), max_len))
    return passes


def test_passes(index_sequences, n_train, max_len=50):
    passes = []
    for m, seq in enumerate(index_sequences):
        passes.extend(build_passes(m, seq, range(n_train[m], len(seq)), max_len))
    return passes


def batch_passes(passes, batch_size, rng=None):
    """Split passes into batches holding at least ``batch_size`` samples each."""
    order = np.arange(len(passes))
    if rng is not None:
        order = rng.permutation(len(passes))
    batches, current, count = [], [], 0
    for k in order:
        current.append(passes[k])
        count += passes[k].n_samples
        if count >= batch_size:
            batches.append(current)
            current, count = [], 0
    if current:
        batches.append(current)
    return batches


# --- backbone -------------------------------------------------------------------

@dataclass
class LSTMWeights:
    W_ih: ad.Tensor
    W_hh: ad.Tensor
    b: ad.Tensor

    @property
    def hidden(self):
        return self.W_hh.shape[1]


def lstm_run(inputs, w):
    """Run a single-layer LSTM over ``inputs`` (list of B x d tensors).

    Gate order is input, forget, candidate, output; initial state is zero.
    Returns the hidden state after every step.
    """
    if not inputs:
        raise EmptySequence("LSTM needs at least one step")
    B, H = inputs[0].shape[0], w.hidden
    h = ad.Tensor(np.zeros((B, H)))
    c = ad.Tensor(np.zeros((B, H)))
    proj = [x @ w.W_ih.T for x in inputs]
    return _lstm_loop(proj, w, h, c)


def _lstm_loop(proj, w, h, c):
    H = w.hidden
    out = []
    for p in proj:
        gates = p + h @ w.W_hh.T + w.b
        i = ad.sigmoid(gates[:, :H])
        f = ad.sigmoid(gates[:, H:2 * H])
        g = ad.tanh(gates[:, 2 * H:3 * H])
        o = ad.sigmoid(gates[:, 3 * H:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        out.append(h)
    return out


def encode_sequence(seq, w):
    """Final hidden state for one sequence of embeddings (T x d2)."""
    seq = ad.as_tensor(seq)
    if seq.shape[0] == 0:
        raise EmptySequence("cannot encode an empty sequence")
    steps = [seq[t:t + 1] for t in range(seq.shape[0])]
    return ad.reshape(lstm_run(steps, w)[-1], (-1,))


def predict_next(h, u, W_out):
    """Probability over POIs: ``softmax(W_out [h || u])``."""
    h, u, W_out = ad.as_tensor(h), ad.as_tensor(u), ad.as_tensor(W_out)
    return ad.softmax(W_out @ ad.concat([h, u], axis=0), axis=0)


def ce_loss(log_probs, targets):
    """Summed negative log-likelihood of ``targets`` under ``log_probs`` (S x N)."""
    targets = np.asarray(targets, dtype=np.int64)
    N = log_probs.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= N):
        raise InvalidTarget(f"targets must lie in [0, {N})")
    return -log_probs[np.arange(len(targets)), targets].sum()


def ce_from_probs(probs, targets):
    """Same loss evaluated on probability rows (log clamped at 1e-12)."""
    probs = ad.as_tensor(probs)
    if probs.ndim == 1:
        probs = ad.reshape(probs, (1, -1))
    return ce_loss(ad.log(probs), targets)


def total_loss(ce, hsl, l_sh, l_sp, beta_hsl, beta_sh, beta_sp):
    return ce + beta_hsl * hsl + beta_sh * l_sh + beta_sp * l_sp


# --- full model -------------------------------------------------------------------

class BiGSLModel:
    """All learnable state plus the forward computation.

    ``views`` maps view id to its primitive feature matrix. Random streams
    are split per component, so the backbone starts from the same weights
    whatever graph configuration is chosen.
    """

    def __init__(self, config, N, M, views):
        self.config = config
        self.N, self.M = N, M
        self.views = {k: np.asarray(v, dtype=np.float64) for k, v in views.items()}
        self.view_ids = list(self.views)
        self.hyper = GslHyperParams(config.K, config.tau1, config.epsilon or 1e-12,
                                    config.top_k, config.estep_period)
        self.params = ParameterStore()
        root = np.random.SeedSequence(config.seed)
        backbone_ss, graph_ss, kmeans_ss = root.spawn(3)
        self._init_backbone(np.random.default_rng(backbone_ss))
        self.kmeans_rngs = {v: np.random.default_rng(s)
                            for v, s in zip(self.view_ids, kmeans_ss.spawn(len(self.view_ids)))}
        self.prototypes = {}
        self._rule_graphs = {}
        self.transforms, self.relations = {}, {}
        if config.graph_mode != "none":
            self._init_graph(np.random.default_rng(graph_ss))

    # parameters
    def _init_backbone(self, rng):
        c, p = self.config, self.params
        d2, d3 = c.d2, c.d3
        p.add("poi_emb", uniform_init(rng, (self.N, d2), d2))
        p.add("user_emb", uniform_init(rng, (self.M, d2), d2))
        p.add("lstm.W_ih", uniform_init(rng, (4 * d3, d2), d3))
        p.add("lstm.W_hh", uniform_init(rng, (4 * d3, d3), d3))
        p.add("lstm.b", uniform_init(rng, (4 * d3,), d3))
        p.add("W_out", uniform_init(rng, (self.N, d3 + d2), d3 + d2))
        self.lstm = LSTMWeights(p["lstm.W_ih"], p["lstm.W_hh"], p["lstm.b"])

    def _init_graph(self, rng):
        c, p = self.config, self.params
        for v in self.view_ids:
            if c.graph_mode == "learned":
                self.transforms[v] = (
                    GslTransform.register(p, f"{v}.gsl", self.views[v].shape[1], c.d2, rng),
                    GslTransform.register(p, f"{v}.proto", c.d2, c.d2, rng),
                )
            self.relations[v] = RelationWeights.register(p, f"{v}.rel", c.d2, c.d3, rng)
        if len(self.view_ids) > 1:
            p.add("fusion.a2", uniform_init(rng, (c.d3,), c.d3))
        p.add("fusion.W_inj", uniform_init(rng, (c.d2, c.d3), c.d3))

    @property
    def uses_graph(self):
        return self.config.graph_mode != "none"

    @property
    def active_relations(self):
        return RELATIONS if self.config.use_prototypes else ("poi",)

    # E-step
    def structure_embeddings(self, v):
        t_poi, _ = self.transforms[v]
        return structure_embed(self.views[v], t_poi).data

    def estep(self):
        if not self.uses_graph:
            return
        for v in self.view_ids:
            Z = self.structure_embeddings(v) if self.config.graph_mode == "learned" else self.views[v]
            self.prototypes[v] = kmeans_estep(Z, self.prototypes.get(v), self.config.K,
                                              self.kmeans_rngs[v])
            self._rule_graphs.pop(v, None)

    def graph(self, v):
        if self.config.graph_mode == "learned":
            t_poi, t_proto = self.transforms[v]
            return build_bilevel_graph(self.views[v], t_poi, t_proto, self.prototypes[v], self.hyper)
        if v not in self._rule_graphs:
            self._rule_graphs[v] = rule_bilevel_graph(v, self.views[v], self.prototypes[v], self.hyper,
                                                      self.config.rule_radius)
        return self._rule_graphs[v]

    # forward
    def representations(self, need_losses=True, rng=None):
        """Enriched POI embeddings and the auxiliary losses (dict of tensors)."""
        c = self.config
        E = self.params["poi_emb"]
        zero = ad.Tensor(0.0)
        aux = {"hsl": zero, "sh": zero, "sp": zero}
        if not self.uses_graph:
            return E, aux, {}
        per_view, graphs = {}, {}
        for v in self.view_ids:
            g = graphs[v] = self.graph(v)
            if need_losses and c.graph_mode == "learned" and c.beta_hsl > 0:
                aux["hsl"] = aux["hsl"] + hsl_loss(g.z, self.prototypes[v], c.tau1)
            per_view[v] = propagate(g, E, prototype_features(g, E), self.relations[v],
                                    self.active_relations)
        a2 = self.params["fusion.a2"] if "fusion.a2" in self.params else None
        rep = fuse_views(per_view, a2)
        if need_losses and len(per_view) > 1:
            if c.beta_sh > 0:
                aux["sh"] = shared_loss(per_view, rep.shared, c.tau2, c.max_negatives, rng)
            if c.beta_sp > 0:
                aux["sp"] = orthogonality_loss(rep.specific)
        enriched = enrich_embedding(E, rep.fused, self.params["fusion.W_inj"])
        return enriched, aux, {"graphs": graphs, "fusion": rep}

    def sequence_logits(self, enriched, passes):
        """Logits (S x N) for every sample in ``passes`` plus their targets."""
        T = max(len(p.window) for p in passes)
        B = len(passes)
        idx = np.zeros((B, T), dtype=np.int64)
        for b, p in enumerate(passes):
            idx[b, :len(p.window)] = p.window
        proj = (enriched @ self.lstm.W_ih.T)[idx.T.reshape(-1)]
        proj = ad.reshape(proj, (T, B, -1))
        h = ad.Tensor(np.zeros((B, self.lstm.hidden)))
        states = _lstm_loop([proj[t] for t in range(T)], self.lstm, h, h)
        stacked = ad.stack(states, axis=0)
        rows_t = np.concatenate([p.out_pos for p in passes])
        rows_b = np.concatenate([np.full(p.n_samples, b) for b, p in enumerate(passes)])
        users = np.concatenate([np.full(p.n_samples, p.user) for p in passes])
        targets = np.concatenate([p.targets for p in passes])
        hidden = stacked[rows_t, rows_b]
        feats = ad.concat([hidden, self.params["user_emb"][users]], axis=1)
        return feats @ self.params["W_out"].T, targets

    def loss(self, passes, rng=None):
        c = self.config
        enriched, aux, _ = self.representations(need_losses=True, rng=rng)
        logits, targets = self.sequence_logits(enriched, passes)
        ce = ce_loss(ad.log_softmax(logits, axis=1), targets)
        total = total_loss(ce, aux["hsl"], aux["sh"], aux["sp"], c.beta_hsl, c.beta_sh, c.beta_sp)
        parts = {"ce": ce.item(), "hsl": aux["hsl"].item(), "sh": aux["sh"].item(),
                 "sp": aux["sp"].item(), "samples": int(len(targets))}
        return total, parts

    def score(self, passes, batch_size=512):
        """Logit matrix (S x N, numpy) and targets for evaluation passes."""
        enriched, _, _ = self.representations(need_losses=False)
        enriched = ad.Tensor(enriched.data)
        scores, targets = [], []
        for batch in batch_passes(passes, batch_size):
            logits, t = self.sequence_logits(enriched, batch)
            scores.append(logits.data)
            targets.append(t)
        return np.concatenate(scores), np.concatenate(targets)

    # persistence
    def state_arrays(self):
        out = {f"param.{k}": v for k, v in self.params.arrays().items()}
        for v, X in self.views.items():
            out[f"feature.{v}"] = X
        for v, ps in self.prototypes.items():
            out[f"proto.{v}.centroids"] = ps.centroids
            out[f"proto.{v}.assignments"] = ps.assignments.astype(np.int64)
        return out

    def load_state_arrays(self, arrays):
        from .structure import PrototypeSet
        self.params.load({k[6:]: a for k, a in arrays.items() if k.startswith("param.")})
        for v in self.view_ids:
            key = f"proto.{v}.centroids"
            if key in arrays:
                self.prototypes[v] = PrototypeSet(np.array(arrays[key]),
                                                  np.array(arrays[f"proto.{v}.assignments"], dtype=np.int64))
        self._rule_graphs.clear()
