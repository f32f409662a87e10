"""Desk-scale molecule-text contrastive learning.

Subpackages cover the full pipeline: SMILES parsing and fingerprints (chem),
exact top-k Tanimoto neighbor search (simindex), a minimal reverse-mode
autodiff engine (tensor), graph and text encoders (encoders), corpus loading
and augmentation sampling (data), contrastive and regularization losses
(losses), the training loop (train), retrieval / QA / screening / probe
protocols plus significance testing (evaluation), and a command line front
end (cli).
"""

__version__ = "0.1.0"
