"""Splitting view representations into shared and specific parts.

The shared part is the mean across views; each view keeps its residual.
A contrastive loss aligns each view with the shared anchor, an
orthogonality loss decorrelates the residuals, and an attention vector
mixes the parts into one fused representation per POI.
"""

import numpy as np

from bigsl.fusion import attentive_fuse, fuse_views, orthogonality_loss, shared_loss

rng = np.random.default_rng(2)
common = rng.normal(size=(6, 4))
views = {"spatial": common + 0.3 * rng.normal(size=(6, 4)),
         "temporal": common + 0.3 * rng.normal(size=(6, 4))}

rep = fuse_views(views, rng.normal(size=4))
print("shared + specific reproduces each view:",
      all(np.allclose(rep.shared.data + rep.specific[v].data, x) for v, x in views.items()))
print(f"contrastive loss (views close to anchor): {shared_loss(views, rep.shared).item():.3f}")
scrambled = {v: rng.permutation(x) for v, x in views.items()}
print(f"contrastive loss (rows shuffled):         {shared_loss(scrambled, rep.shared).item():.3f}")
print(f"orthogonality loss of residuals: {orthogonality_loss(rep.specific).item():.3f}")

fused, weights = attentive_fuse(rep.shared, rep.specific, np.zeros(4), return_weights=True)
print("zero attention vector weights parts equally:", np.round(weights.data[0], 3).tolist())
