"""Contrastive multiview fusion of per-view POI representations."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch, ViewCountTooSmall

_MASKED = -1e30


@dataclass
class ViewRepresentations:
    per_view: dict
    shared: ad.Tensor = None
    specific: dict = field(default_factory=dict)
    fused: ad.Tensor = None
    weights: ad.Tensor = None


def shared_representation(per_view):
    views = list(per_view.values()) if isinstance(per_view, dict) else list(per_view)
    views = [ad.as_tensor(v) for v in views]
    if len(views) < 2:
        raise ViewCountTooSmall(f"need at least 2 views, got {len(views)}")
    ref = views[0].shape
    for v in views[1:]:
        if v.shape != ref:
            raise ShapeMismatch("shared_representation", ref, v.shape)
    total = views[0]
    for v in views[1:]:
        total = total + v
    return total * (1.0 / len(views))


def specific_representations(per_view, shared):
    return {k: ad.as_tensor(v) - shared for k, v in per_view.items()}


def negative_columns(N, max_negatives=512, rng=None):
    """Columns used as negatives, or ``None`` for the full set.

    Beyond ``max_negatives + 1`` POIs a seeded subset of ``min(N - 1,
    max_negatives)`` columns is shared by every row; a row whose own index
    falls in the subset simply has one negative fewer.
    """
    if max_negatives is None or N - 1 <= max_negatives:
        return None
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.sort(rng.choice(N, size=min(N - 1, max_negatives), replace=False))


def _view_infonce(p_v, shared_n, tau2, cols):
    pn = ad.l2_normalize(p_v, axis=1)
    N = pn.shape[0]
    pos = (pn * shared_n).sum(axis=1) * (1.0 / tau2)
    if cols is None:
        cross_t, same_t, col_idx = shared_n, pn, np.arange(N)
    else:
        cross_t, same_t, col_idx = shared_n[cols], pn[cols], cols
    self_col = col_idx[None, :] == np.arange(N)[:, None]
    cross = ad.where(self_col, _MASKED, pn @ cross_t.T * (1.0 / tau2))
    same = ad.where(self_col, _MASKED, pn @ same_t.T * (1.0 / tau2))
    logits = ad.concat([ad.reshape(pos, (-1, 1)), cross, same], axis=1)
    return ad.log_softmax(logits, axis=1)[:, 0]


def shared_loss(per_view, shared, tau2=0.5, max_negatives=None, rng=None):
    """InfoNCE agreement between each view and the shared anchor.

    The positive pair is ``(p_i^v, p_c,i)``; negatives are ``(p_i^v, p_c,j)``
    and ``(p_i^v, p_j^v)`` for ``j != i``, scored by cosine / ``tau2``.
    Returns the negated mean over POIs and views.
    """
    shared = ad.as_tensor(shared)
    N = shared.shape[0]
    shared_n = ad.l2_normalize(shared, axis=1)
    cols = negative_columns(N, max_negatives, rng)
    total = None
    for p_v in per_view.values():
        term = _view_infonce(ad.as_tensor(p_v), shared_n, tau2, cols).sum()
        total = term if total is None else total + term
    return total * (-1.0 / (N * len(per_view)))


def orthogonality_loss(specific):
    """Mean over POIs of squared dot products between view-specific parts.

    Ordered pairs ``(v, u)`` with ``v != u`` are each counted once, so every
    unordered pair contributes twice.
    """
    views = list(specific.values())
    if len(views) < 2:
        raise ViewCountTooSmall(f"need at least 2 views, got {len(views)}")
    N = views[0].shape[0]
    total = None
    for a in range(len(views)):
        for b in range(len(views)):
            if a == b:
                continue
            dots = (views[a] * views[b]).sum(axis=1)
            term = (dots * dots).sum()
            total = term if total is None else total + term
    return total * (1.0 / N)


def attentive_fuse(shared, specific, a2, return_weights=False):
    """Softmax-weighted sum of the shared part and each specific part."""
    parts = [ad.as_tensor(shared)] + [ad.as_tensor(s) for s in specific.values()]
    a2 = ad.as_tensor(a2)
    if a2.shape != (parts[0].shape[1],):
        raise ShapeMismatch("attentive_fuse", a2.shape, parts[0].shape)
    logits = ad.concat([ad.reshape(p @ a2, (-1, 1)) for p in parts], axis=1)
    weights = ad.softmax(logits, axis=1)
    fused = None
    for k, p in enumerate(parts):
        term = p * weights[:, k:k + 1]
        fused = term if fused is None else fused + term
    if return_weights:
        return fused, weights
    return fused


def fuse_views(per_view, a2):
    """Full fusion pass; a single view is passed through untouched."""
    if len(per_view) == 1:
        (only,) = per_view.values()
        return ViewRepresentations(per_view, fused=only)
    shared = shared_representation(per_view)
    specific = specific_representations(per_view, shared)
    fused, weights = attentive_fuse(shared, specific, a2, return_weights=True)
    return ViewRepresentations(per_view, shared, specific, fused, weights)


def enrich_embedding(E_id, fused, W_inj):
    """``l_i + W_inj p~_i`` for every POI."""
    E_id, fused, W_inj = ad.as_tensor(E_id), ad.as_tensor(fused), ad.as_tensor(W_inj)
    if W_inj.shape != (E_id.shape[1], fused.shape[1]) or E_id.shape[0] != fused.shape[0]:
        raise ShapeMismatch("enrich_embedding", E_id.shape, fused.shape)
    return E_id + fused @ W_inj.T
