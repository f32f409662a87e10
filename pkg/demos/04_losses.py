"""The three training objectives and how they relate.

Run: python3 demos/04_losses.py
"""

import numpy as np

from moltext.losses import (
    LossConfig,
    infonce_loss,
    pseudo_labels,
    s2p_loss,
)
from moltext.tensor import Tensor

rng = np.random.default_rng(7)
n, d = 8, 16
z_mol = Tensor(rng.normal(size=(n, d)), requires_grad=True)
z_text = Tensor(rng.normal(size=(n, d)), requires_grad=True)

# Structural similarities between the text's source molecule and every batch
# molecule become soft targets: a molecule is allowed to match several texts
# in proportion to how similar their structures are.
sims = np.clip(rng.random((n, n)), 0, 1)
np.fill_diagonal(sims, 1.0)

labels = pseudo_labels(sims[0], tau1=0.1)
print("pseudo-label row (peaked at the true pair):")
print(np.array_str(labels, precision=3, suppress_small=True))

cfg = LossConfig(tau1=0.1, tau2=0.07, tau=0.07)
t2m, m2t = s2p_loss(z_text, z_mol, sims, cfg)
print(f"\nsoft cross-entropy, text->mol: {t2m.item():.4f}, mol->text: {m2t.item():.4f}")

# With one-hot targets (identity similarity) and a vanishing label
# temperature, the same objective becomes plain InfoNCE.
sharp = LossConfig(tau1=1e-4, tau2=0.07, tau=0.07)
t2m_i, m2t_i = s2p_loss(z_text, z_mol, np.eye(n), sharp)
nce = infonce_loss(z_mol, z_text, 0.07)
print(f"identity-similarity limit: {t2m_i.item() + m2t_i.item():.6f}")
print(f"InfoNCE at the same temperature: {nce.item():.6f}")
