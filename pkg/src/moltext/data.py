"""Corpus and evaluation datasets (JSONL) plus the two training samplers.

The training corpus is one JSON object per line: {"id", "smiles",
"descriptions": [...]}. Loading is eager and strict: every SMILES is parsed,
every fingerprint computed, and every validation failure reports its line
number. Evaluation datasets reuse the same shape with task-specific fields.

Batch sampling enumerates (molecule, description) pairs and draws uniformly
without replacement, so molecules with more descriptions show up
proportionally more often. With probability p an item's molecule is swapped
for a uniform draw from its top-k similarity neighbors while the description
stays put; the similarity matrix for the loss is always computed against the
ORIGINAL molecule's fingerprint. The regularization sampler draws molecules
with at least `min_descriptions` descriptions (with replacement) and pairs
two distinct descriptions per item.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .chem import Fingerprint, MolecularGraph, SmilesError, compute_fingerprint, parse_smiles
from .encoders import concat_with_sep
from .simindex import SimilarityIndex


class CorpusError(ValueError):
    """Malformed corpus or dataset file; message carries the line number."""


class DuplicateIdError(CorpusError):
    pass


class BatchLargerThanCorpusError(ValueError):
    pass


class NoEligibleMoleculesError(ValueError):
    pass


class MalformedQAItemError(CorpusError):
    pass


@dataclass
class Molecule:
    mol_id: object
    smiles: str
    graph: MolecularGraph
    fingerprint: Fingerprint
    descriptions: list[str]


@dataclass
class Corpus:
    molecules: list[Molecule]
    radius: int
    nbits: int

    def __post_init__(self):
        # (molecule index, description index) pairs are the sampling universe
        self.pairs = [
            (i, d) for i, mol in enumerate(self.molecules) for d in range(len(mol.descriptions))
        ]

    def __len__(self) -> int:
        return len(self.molecules)

    def fingerprints(self) -> list[Fingerprint]:
        return [m.fingerprint for m in self.molecules]

    def all_descriptions(self) -> list[str]:
        return [text for m in self.molecules for text in m.descriptions]


def _read_jsonl(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {e}") from None


def _require(record: dict, key: str, path: str, line_no: int):
    if key not in record:
        raise CorpusError(f"{path}:{line_no}: missing required field {key!r}")
    return record[key]


def _parse_graph(smiles, path: str, line_no: int) -> MolecularGraph:
    if not isinstance(smiles, str):
        raise CorpusError(f"{path}:{line_no}: 'smiles' must be a string")
    try:
        return parse_smiles(smiles)
    except SmilesError as e:
        raise CorpusError(f"{path}:{line_no}: bad SMILES {smiles!r}: {e}") from None


def load_corpus(path: str, radius: int = 2, nbits: int = 2048) -> Corpus:
    molecules = []
    seen_ids = set()
    for line_no, record in _read_jsonl(path):
        mol_id = _require(record, "id", path, line_no)
        smiles = _require(record, "smiles", path, line_no)
        descriptions = _require(record, "descriptions", path, line_no)
        if not isinstance(descriptions, list) or not descriptions:
            raise CorpusError(f"{path}:{line_no}: 'descriptions' must be a non-empty list")
        for d in descriptions:
            if not isinstance(d, str) or not d.strip():
                raise CorpusError(f"{path}:{line_no}: descriptions must be non-empty strings")
        key = (type(mol_id).__name__, str(mol_id))
        if key in seen_ids:
            raise DuplicateIdError(f"{path}:{line_no}: duplicate molecule id {mol_id!r}")
        seen_ids.add(key)
        graph = _parse_graph(smiles, path, line_no)
        molecules.append(
            Molecule(
                mol_id=mol_id,
                smiles=smiles,
                graph=graph,
                fingerprint=compute_fingerprint(graph, radius=radius, nbits=nbits),
                descriptions=list(descriptions),
            )
        )
    if not molecules:
        raise CorpusError(f"{path}: corpus holds no molecules")
    return Corpus(molecules=molecules, radius=radius, nbits=nbits)


# ---------------------------------------------------------------------------
# Training samplers


@dataclass
class AugmentationConfig:
    k: int = 10
    p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"substitution probability must lie in [0, 1], got {self.p}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass
class TrainingItem:
    source_idx: int  # the molecule whose description this is
    mol_idx: int  # the molecule actually embedded (neighbor when substituted)
    description: str
    substituted: bool


@dataclass
class TrainingBatch:
    items: list[TrainingItem]

    def source_fingerprints(self, corpus: Corpus) -> list[Fingerprint]:
        return [corpus.molecules[item.source_idx].fingerprint for item in self.items]

    def batch_fingerprints(self, corpus: Corpus) -> list[Fingerprint]:
        return [corpus.molecules[item.mol_idx].fingerprint for item in self.items]


def sample_training_batch(
    corpus: Corpus,
    index: SimilarityIndex | None,
    cfg: AugmentationConfig,
    batch_size: int,
    rng: np.random.Generator,
) -> TrainingBatch:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(corpus.pairs):
        raise BatchLargerThanCorpusError(
            f"batch_size {batch_size} exceeds the {len(corpus.pairs)} available (molecule, description) pairs"
        )
    if cfg.p > 0 and index is None:
        raise ValueError("augmentation with p > 0 needs a similarity index")
    chosen = rng.choice(len(corpus.pairs), size=batch_size, replace=False)
    items = []
    for pair_idx in chosen:
        mol_idx, desc_idx = corpus.pairs[int(pair_idx)]
        description = corpus.molecules[mol_idx].descriptions[desc_idx]
        substituted = False
        batch_idx = mol_idx
        # p == 0 draws nothing, keeping the stream equal to unaugmented sampling
        if cfg.p > 0 and rng.random() < cfg.p:
            neighbors = index.neighbors[mol_idx]
            if neighbors:
                batch_idx = neighbors[int(rng.integers(len(neighbors)))][0]
                substituted = True
        items.append(
            TrainingItem(
                source_idx=mol_idx,
                mol_idx=batch_idx,
                description=description,
                substituted=substituted,
            )
        )
    return TrainingBatch(items=items)


@dataclass
class ERItem:
    mol_idx: int
    text: str  # t
    text_tilde: str  # t [SEP] t', a distinct description of the same molecule


@dataclass
class ERBatch:
    items: list[ERItem]


def sample_er_batch(
    corpus: Corpus,
    batch_size: int,
    rng: np.random.Generator,
    min_descriptions: int = 2,
) -> ERBatch:
    """Molecules drawn with replacement among those with enough descriptions."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    eligible = [i for i, m in enumerate(corpus.molecules) if len(m.descriptions) >= min_descriptions]
    if not eligible:
        raise NoEligibleMoleculesError(
            f"no molecule has >= {min_descriptions} descriptions; regularization has nothing to pair"
        )
    items = []
    for _ in range(batch_size):
        mol_idx = eligible[int(rng.integers(len(eligible)))]
        descs = corpus.molecules[mol_idx].descriptions
        d1, d2 = rng.choice(len(descs), size=2, replace=False)
        text = descs[int(d1)]
        items.append(
            ERItem(
                mol_idx=mol_idx,
                text=text,
                text_tilde=concat_with_sep(text, descs[int(d2)]),
            )
        )
    return ERBatch(items=items)


# ---------------------------------------------------------------------------
# Evaluation datasets


@dataclass
class RetrievalItem:
    item_id: object
    smiles: str
    graph: MolecularGraph
    description: str


@dataclass
class QAItem:
    item_id: object
    smiles: str
    graph: MolecularGraph
    question: str
    options: list[str]
    answer_index: int


@dataclass
class ScreeningItem:
    item_id: object
    smiles: str
    graph: MolecularGraph
    label: int


@dataclass
class ProbeItem:
    item_id: object
    smiles: str
    graph: MolecularGraph
    labels: list[int | None]


def load_retrieval_dataset(path: str) -> list[RetrievalItem]:
    items = []
    for line_no, record in _read_jsonl(path):
        item_id = _require(record, "id", path, line_no)
        smiles = _require(record, "smiles", path, line_no)
        description = _require(record, "description", path, line_no)
        if not isinstance(description, str) or not description.strip():
            raise CorpusError(f"{path}:{line_no}: 'description' must be a non-empty string")
        items.append(RetrievalItem(item_id, smiles, _parse_graph(smiles, path, line_no), description))
    if not items:
        raise CorpusError(f"{path}: dataset holds no items")
    return items


def load_qa_dataset(path: str) -> list[QAItem]:
    items = []
    for line_no, record in _read_jsonl(path):
        item_id = _require(record, "id", path, line_no)
        smiles = _require(record, "smiles", path, line_no)
        question = _require(record, "question", path, line_no)
        options = _require(record, "options", path, line_no)
        answer_index = _require(record, "answer_index", path, line_no)
        if not isinstance(options, list) or len(options) != 5:
            raise MalformedQAItemError(f"{path}:{line_no}: need exactly 5 options, got {len(options) if isinstance(options, list) else type(options).__name__}")
        if not all(isinstance(o, str) and o.strip() for o in options):
            raise MalformedQAItemError(f"{path}:{line_no}: options must be non-empty strings")
        if not isinstance(answer_index, int) or not 0 <= answer_index < 5:
            raise MalformedQAItemError(f"{path}:{line_no}: answer_index must be an int in 0..4")
        items.append(
            QAItem(item_id, smiles, _parse_graph(smiles, path, line_no), question, options, answer_index)
        )
    if not items:
        raise CorpusError(f"{path}: dataset holds no items")
    return items


def load_screening_dataset(path: str) -> list[ScreeningItem]:
    items = []
    for line_no, record in _read_jsonl(path):
        item_id = _require(record, "id", path, line_no)
        smiles = _require(record, "smiles", path, line_no)
        label = _require(record, "label", path, line_no)
        if label not in (0, 1):
            raise CorpusError(f"{path}:{line_no}: 'label' must be 0 or 1")
        items.append(ScreeningItem(item_id, smiles, _parse_graph(smiles, path, line_no), int(label)))
    if not items:
        raise CorpusError(f"{path}: dataset holds no items")
    return items


def load_probe_dataset(path: str) -> list[ProbeItem]:
    items = []
    n_tasks = None
    for line_no, record in _read_jsonl(path):
        item_id = _require(record, "id", path, line_no)
        smiles = _require(record, "smiles", path, line_no)
        labels = _require(record, "labels", path, line_no)
        if not isinstance(labels, list) or not labels:
            raise CorpusError(f"{path}:{line_no}: 'labels' must be a non-empty list")
        for lab in labels:
            if lab not in (0, 1, None):
                raise CorpusError(f"{path}:{line_no}: labels must be 0, 1, or null")
        if n_tasks is None:
            n_tasks = len(labels)
        elif len(labels) != n_tasks:
            raise CorpusError(f"{path}:{line_no}: expected {n_tasks} labels, got {len(labels)}")
        items.append(ProbeItem(item_id, smiles, _parse_graph(smiles, path, line_no), list(labels)))
    if not items:
        raise CorpusError(f"{path}: dataset holds no items")
    return items
