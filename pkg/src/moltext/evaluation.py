"""Zero-shot protocols, a linear probe, and the significance statistics.

Four ways to read out a trained joint embedding:

  * retrieval   pick the right counterpart among sampled distractors
  * qa          pick the option whose text lands closest to the molecule
  * screening   rank a library against one textual prompt
  * probe       logistic heads on frozen molecule embeddings

plus rank-based ROC AUC and a one-sided paired t-test for comparing runs.
All randomness flows through seeded generators, so every protocol returns
identical numbers for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import ProbeItem, QAItem, RetrievalItem, ScreeningItem
from .encoders import MolTextModel, tokenize


class DatasetTooSmallError(ValueError):
    pass


class TopNExceedsDatasetError(ValueError):
    pass


class AllLabelsMissingError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


class ZeroVarianceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Shared embedding helpers (inference only, nothing is recorded)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def embed_molecule_matrix(model: MolTextModel, graphs) -> np.ndarray:
    return np.stack([model.embed_molecule(g).data for g in graphs])


def embed_text_matrix(model: MolTextModel, texts) -> np.ndarray:
    max_len = model.config.max_len
    return np.stack([model.embed_text(tokenize(model.vocab, t, max_len)).data for t in texts])


# ---------------------------------------------------------------------------
# Retrieval: given one side, find the true counterpart among n_options
# candidates (the counterpart plus sampled distractors)


@dataclass
class RetrievalResult:
    direction: str
    n_options: int
    trials: int
    accuracies: list[float]  # percent, one per trial
    mean: float
    std: float


def eval_retrieval(
    model: MolTextModel,
    items: list[RetrievalItem],
    direction: str = "given_text",
    n_options: int = 20,
    trials: int = 1,
    seed: int = 0,
) -> RetrievalResult:
    if direction not in ("given_text", "given_molecule"):
        raise ValueError(f"direction must be 'given_text' or 'given_molecule', got {direction!r}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = len(items)
    if n < n_options:
        raise DatasetTooSmallError(f"need at least {n_options} items, got {n}")

    z_mol = _unit_rows(embed_molecule_matrix(model, [it.graph for it in items]))
    z_text = _unit_rows(embed_text_matrix(model, [it.description for it in items]))
    queries, candidates = (z_text, z_mol) if direction == "given_text" else (z_mol, z_text)

    rng = np.random.default_rng(seed)
    accuracies = []
    for _ in range(trials):
        correct = 0
        for i in range(n):
            others = rng.choice(n - 1, size=n_options - 1, replace=False)
            others = np.where(others >= i, others + 1, others)  # skip the truth
            pool = np.sort(np.concatenate(([i], others)))  # ties resolve to the lowest index
            scores = candidates[pool] @ queries[i]
            if pool[int(np.argmax(scores))] == i:
                correct += 1
        accuracies.append(100.0 * correct / n)
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies, ddof=1)) if trials > 1 else 0.0
    return RetrievalResult(direction, n_options, trials, accuracies, mean, std)


# ---------------------------------------------------------------------------
# Multiple choice: each option is appended to the question, the option whose
# text embedding lies closest to the molecule wins


@dataclass
class QAResult:
    n_items: int
    correct: int
    accuracy: float  # percent


def eval_qa(model: MolTextModel, items: list[QAItem]) -> QAResult:
    if not items:
        raise DatasetTooSmallError("no question items")
    correct = 0
    for item in items:
        z_m = model.embed_molecule(item.graph).data
        z_m = z_m / max(float(np.linalg.norm(z_m)), 1e-12)
        texts = [f"{item.question} {option}" for option in item.options]
        z_opts = _unit_rows(embed_text_matrix(model, texts))
        if int(np.argmax(z_opts @ z_m)) == item.answer_index:
            correct += 1
    return QAResult(len(items), correct, 100.0 * correct / len(items))


# ---------------------------------------------------------------------------
# Screening: rank the library against one prompt, report the fraction of
# actives inside the top n


@dataclass
class ScreeningResult:
    top_n: int
    hits: int
    hit_rate: float
    prevalence: float
    ranked_ids: list = field(default_factory=list)


def eval_screening(
    model: MolTextModel, items: list[ScreeningItem], prompt: str, top_n: int
) -> ScreeningResult:
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if top_n > len(items):
        raise TopNExceedsDatasetError(f"top_n={top_n} but the dataset has {len(items)} entries")
    z_mol = _unit_rows(embed_molecule_matrix(model, [it.graph for it in items]))
    z_p = embed_text_matrix(model, [prompt])[0]
    z_p = z_p / max(float(np.linalg.norm(z_p)), 1e-12)
    scores = z_mol @ z_p
    order = np.lexsort((np.arange(len(items)), -scores))  # score desc, then position asc
    top = order[:top_n]
    hits = int(sum(items[int(i)].label for i in top))
    prevalence = sum(it.label for it in items) / len(items)
    return ScreeningResult(
        top_n=top_n,
        hits=hits,
        hit_rate=hits / top_n,
        prevalence=prevalence,
        ranked_ids=[items[int(i)].item_id for i in order],
    )


# ---------------------------------------------------------------------------
# Probe: logistic heads on frozen molecule embeddings, one per task, trained
# full batch with Adam on an 8:1:1 split; the epoch with the best validation
# AUC supplies the reported test AUC


@dataclass
class ProbeResult:
    test_aucs: list[float]
    mean_auc: float
    best_epochs: list[int]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _auc_or_chance(labels: np.ndarray, scores: np.ndarray) -> float:
    # single-class splits carry no ranking signal; count them as chance
    if len(set(labels.tolist())) < 2:
        return 0.5
    return roc_auc(labels, scores)


def finetune_probe(
    model: MolTextModel,
    items: list[ProbeItem],
    epochs: int = 100,
    learning_rate: float = 0.05,
    seed: int = 0,
) -> ProbeResult:
    if len(items) < 3:
        raise DatasetTooSmallError("need at least 3 items for a train/val/test split")
    x = embed_molecule_matrix(model, [it.graph for it in items])
    n, dim = x.shape
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, round(0.1 * n))
    n_test = max(1, round(0.1 * n))
    test_idx = perm[:n_test]
    val_idx = perm[n_test : n_test + n_val]
    train_idx = perm[n_test + n_val :]
    if len(train_idx) == 0:
        raise DatasetTooSmallError("split left no training items")

    n_tasks = len(items[0].labels)
    test_aucs = []
    best_epochs = []
    for task in range(n_tasks):
        raw = np.array(
            [-1 if it.labels[task] is None else int(it.labels[task]) for it in items], dtype=np.int64
        )
        if np.all(raw < 0):
            raise AllLabelsMissingError(f"task {task} has no labels at all")

        def labeled(idx):
            keep = idx[raw[idx] >= 0]
            return keep

        tr, va, te = labeled(train_idx), labeled(val_idx), labeled(test_idx)
        if len(tr) == 0:
            raise AllLabelsMissingError(f"task {task} has no labeled training items")

        w = np.zeros(dim)
        b = 0.0
        m_w = np.zeros(dim)
        v_w = np.zeros(dim)
        m_b = v_b = 0.0
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        x_tr, y_tr = x[tr], raw[tr].astype(np.float64)
        best_val = -1.0
        best_epoch = 0
        best_params = (w.copy(), b)
        for epoch in range(1, epochs + 1):
            p = _sigmoid(x_tr @ w + b)
            g_w = x_tr.T @ (p - y_tr) / len(tr)
            g_b = float(np.mean(p - y_tr))
            m_w = beta1 * m_w + (1 - beta1) * g_w
            v_w = beta2 * v_w + (1 - beta2) * g_w * g_w
            m_b = beta1 * m_b + (1 - beta1) * g_b
            v_b = beta2 * v_b + (1 - beta2) * g_b * g_b
            c1 = 1 - beta1**epoch
            c2 = 1 - beta2**epoch
            w = w - learning_rate * (m_w / c1) / (np.sqrt(v_w / c2) + eps)
            b = b - learning_rate * (m_b / c1) / (np.sqrt(v_b / c2) + eps)
            if len(va):
                val_auc = _auc_or_chance(raw[va], x[va] @ w + b)
            else:
                val_auc = 0.5
            if val_auc > best_val:  # strict: ties keep the earlier epoch
                best_val = val_auc
                best_epoch = epoch
                best_params = (w.copy(), b)
        w_best, b_best = best_params
        if len(te):
            test_aucs.append(_auc_or_chance(raw[te], x[te] @ w_best + b_best))
        else:
            test_aucs.append(0.5)
        best_epochs.append(best_epoch)
    return ProbeResult(test_aucs, float(np.mean(test_aucs)), best_epochs)


# ---------------------------------------------------------------------------
# Statistics


def roc_auc(labels, scores) -> float:
    """Rank-based AUC with tie-averaged ranks; needs both classes present."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise LengthMismatchError(f"shapes disagree: {labels.shape} vs {scores.shape}")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos + n_neg != len(labels):
        raise ValueError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one item of each class")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks_sorted = np.arange(1, len(labels) + 1, dtype=np.float64)
    i = 0
    while i < len(labels):
        j = i
        while j < len(labels) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks_sorted[i:j] = 0.5 * (i + 1 + j)  # average rank across the tie block
        i = j
    ranks = np.empty(len(labels))
    ranks[order] = ranks_sorted
    rank_sum = float(np.sum(ranks[labels == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-14:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x < 0.0 or x > 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: int) -> float:
    """P(T >= t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    x = df / (df + t * t)
    half = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return half if t >= 0 else 1.0 - half


@dataclass
class TTestResult:
    t: float
    df: int
    p_value: float  # one-sided, alternative mean(a - b) > 0
    mean_diff: float


def paired_ttest(a, b) -> TTestResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatchError(f"shapes disagree: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise ValueError("need at least two paired observations")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ZeroVarianceError("all paired differences are identical")
    n = len(d)
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    df = n - 1
    return TTestResult(t=t, df=df, p_value=student_t_sf(t, df), mean_diff=float(np.mean(d)))
