"""Contrastive objectives over joint-space embeddings.

s2p_loss replaces one-hot contrastive targets with soft pseudo-labels: each
row of the structural similarity matrix is pushed through a softmax at
temperature tau1 and used as the target distribution for the cosine
prediction softmax at temperature tau2, in both the text-to-molecule and
molecule-to-text directions. As tau1 -> 0 with a strictly diagonally dominant
similarity matrix the pseudo-labels collapse to one-hot and the sum of both
directions converges to infonce_loss at tau2; infonce_loss is accordingly the
UNHALVED sum of the two directional cross-entropy means.

er_loss pulls the embedding of a description toward the frozen embedding of
that description concatenated (via [SEP]) with another description of the
same molecule; the target side sits behind stop_gradient, and the sign is
positive: training minimizes the distance.

Cross-entropies go through row_log_softmax, never log(softmax), so every
loss stays finite for any finite embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LossConfig:
    tau1: float = 0.1  # pseudo-label temperature over structural similarities
    tau2: float = 0.1  # prediction temperature over cosine similarities
    tau: float = 0.1  # InfoNCE temperature
    alpha: float = 1.0  # weight of the regularization term

    def __post_init__(self):
        for name in ("tau1", "tau2", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")


def pseudo_labels(sims: np.ndarray, tau1: float) -> np.ndarray:
    """Row-stabilized softmax of sims / tau1; accepts a row or a matrix."""
    if tau1 <= 0:
        raise ValueError(f"tau1 must be positive, got {tau1}")
    sims = np.asarray(sims, dtype=np.float64)
    squeeze = sims.ndim == 1
    if squeeze:
        sims = sims[None, :]
    if sims.ndim != 2:
        raise ValueError(f"similarities must be 1-D or 2-D, got shape {sims.shape}")
    shifted = sims / tau1
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out


def _soft_cross_entropy(targets: np.ndarray, z_rows: Tensor, z_cols: Tensor, tau2: float) -> Tensor:
    """-(1/N) * sum_ij targets_ij * log softmax_row(cos(rows, cols) / tau2)_ij."""
    n = targets.shape[0]
    logits = T.scale(T.cosine_similarity_matrix(z_rows, z_cols), 1.0 / tau2)
    log_pred = T.row_log_softmax(logits)
    return T.scale(T.tensor_sum(T.mul(Tensor(targets), log_pred)), -1.0 / n)


def s2p_loss(
    z_text: Tensor, z_mol: Tensor, sims: np.ndarray, cfg: LossConfig
) -> tuple[Tensor, Tensor]:
    """Both directional pseudo-label cross-entropies: (text->mol, mol->text).

    sims[i, j] is the structural similarity between the source molecule of
    text i and batch molecule j; it enters as a constant (no gradient).
    """
    sims = np.asarray(sims, dtype=np.float64)
    n = z_text.data.shape[0]
    if z_text.data.ndim != 2 or z_mol.data.ndim != 2 or z_mol.data.shape[0] != n:
        raise ValueError(f"embedding shapes disagree: {z_text.data.shape} vs {z_mol.data.shape}")
    if sims.shape != (n, n):
        raise ValueError(f"similarity matrix must be ({n}, {n}), got {sims.shape}")
    t2m = _soft_cross_entropy(pseudo_labels(sims, cfg.tau1), z_text, z_mol, cfg.tau2)
    m2t = _soft_cross_entropy(pseudo_labels(sims.T, cfg.tau1), z_mol, z_text, cfg.tau2)
    return t2m, m2t


def infonce_directions(z_mol: Tensor, z_text: Tensor, tau: float) -> tuple[Tensor, Tensor]:
    """One-hot directional cross-entropy means: (text->mol, mol->text)."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    n = z_mol.data.shape[0]
    if z_text.data.shape[0] != n:
        raise ValueError("batch sizes disagree between embeddings")

    def direction(rows, cols):
        logits = T.scale(T.cosine_similarity_matrix(rows, cols), 1.0 / tau)
        return T.scale(T.tensor_sum(T.diag_part(T.row_log_softmax(logits))), -1.0 / n)

    return direction(z_text, z_mol), direction(z_mol, z_text)


def infonce_loss(z_mol: Tensor, z_text: Tensor, tau: float) -> Tensor:
    t2m, m2t = infonce_directions(z_mol, z_text, tau)
    return T.add(t2m, m2t)


def er_loss(f_text, texts: list[list[int]], tildes: list[list[int]]) -> Tensor:
    """(1/N) sum_i || f_text(t_i) - stop_gradient(f_text(t~_i)) ||^2."""
    if len(texts) != len(tildes) or not texts:
        raise ValueError(f"need matching non-empty batches, got {len(texts)} and {len(tildes)}")
    z = T.concat_rows([f_text(ids) for ids in texts])
    z_tilde = T.stop_gradient(T.concat_rows([f_text(ids) for ids in tildes]))
    return T.mean(T.l2_norm_sq(T.sub(z, z_tilde)))


@dataclass
class LossOutput:
    total: Tensor
    s2p_t2m: Tensor
    s2p_m2t: Tensor
    er: Tensor
    infonce: Tensor | None = None


def total_loss(s2p_t2m: Tensor, s2p_m2t: Tensor, er: Tensor | None, alpha: float) -> LossOutput:
    """total = s2p_t2m + s2p_m2t + alpha * er; a missing er counts as zero."""
    if er is None:
        er = Tensor(0.0)
    total = T.add(T.add(s2p_t2m, s2p_m2t), T.scale(er, alpha))
    return LossOutput(total=total, s2p_t2m=s2p_t2m, s2p_m2t=s2p_m2t, er=er)
