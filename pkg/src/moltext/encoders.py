"""Joint-space encoders: a GIN over molecular graphs and a toy transformer over text.

The molecular side embeds per-atom features (element, degree, formal charge,
aromatic flag), runs sum-aggregation message passing with a learnable epsilon
per layer, h_v <- MLP((1 + eps) * h_v + sum of neighbor h_u), and pools atoms
by sum or mean. The result is permutation invariant up to float addition
order.

The text side is a word-level tokenizer with reserved ids 0..3 for [PAD],
[CLS], [SEP], [UNK], sinusoidal positions, and single-head attention blocks
with residual connections. [PAD] positions are masked out of attention and
pooling, so appending pad tokens never changes the output.

Projection heads map both encoders into one joint space of dimension
projection_dim; cosine similarity there is the retrieval signal everywhere
downstream. Checkpoints serialize every parameter plus the vocabulary into a
single binary file (magic "AMCK").
"""

from __future__ import annotations

import json
import os
import re
import struct
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .chem import MolecularGraph
from .tensor import Tensor

PAD_ID, CLS_ID, SEP_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")

# fixed element slots; anything else lands in the trailing OTHER row
ELEMENT_VOCAB = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "H")

AMCK_MAGIC = b"AMCK"
AMCK_VERSION = 1

_WORD_RE = re.compile(r"[a-z0-9]+")


class EmptyGraphError(ValueError):
    pass


class EmptyTokenListError(ValueError):
    pass


class EmptyDescriptionError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    embed_dim: int = 64
    projection_dim: int = 32
    gin_layers: int = 2
    text_blocks: int = 2
    max_len: int = 64
    vocab_cap: int = 2000
    text_pooling: str = "mean"  # "mean" over non-pad positions, or "cls"
    gin_readout: str = "sum"  # or "mean"
    mlp_projection: bool = False

    def __post_init__(self):
        if self.text_pooling not in ("mean", "cls"):
            raise ValueError(f"text_pooling must be 'mean' or 'cls', got {self.text_pooling!r}")
        if self.gin_readout not in ("sum", "mean"):
            raise ValueError(f"gin_readout must be 'sum' or 'mean', got {self.gin_readout!r}")


# ---------------------------------------------------------------------------
# Tokenization


def word_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens; the literal '[SEP]' survives as is."""
    out = []
    for chunk in text.split():
        if chunk == "[SEP]":
            out.append(chunk)
        else:
            out.extend(_WORD_RE.findall(chunk.lower()))
    return out


def build_vocab(texts, cap: int = 2000) -> dict[str, int]:
    """Frequency-ranked word vocabulary with the four reserved ids in front."""
    if cap <= len(RESERVED_TOKENS):
        raise ValueError(f"vocab cap must exceed {len(RESERVED_TOKENS)}")
    counts = Counter()
    for text in texts:
        counts.update(tok for tok in word_tokens(text) if tok != "[SEP]")
    vocab = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for word, _ in ranked[: cap - len(RESERVED_TOKENS)]:
        vocab[word] = len(vocab)
    return vocab


def tokenize(vocab: dict[str, int], text: str, max_len: int = 64) -> list[int]:
    """[CLS] plus word ids, truncated to max_len; unknown words become [UNK]."""
    ids = [CLS_ID]
    for tok in word_tokens(text):
        ids.append(SEP_ID if tok == "[SEP]" else vocab.get(tok, UNK_ID))
    return ids[:max_len]


def concat_with_sep(a: str, b: str) -> str:
    if not a.strip() or not b.strip():
        raise EmptyDescriptionError("cannot join an empty description")
    return f"{a} [SEP] {b}"


# ---------------------------------------------------------------------------
# Parameter initialization helpers


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))


def _emb_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, cols))


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# Molecular encoder


class GinEncoder:
    """Sum-aggregation message passing with learnable epsilon per layer."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        h = config.hidden_dim
        self.config = config
        self.element_emb = _param(_emb_init(rng, len(ELEMENT_VOCAB) + 1, h))
        self.degree_emb = _param(_emb_init(rng, 9, h))
        self.charge_emb = _param(_emb_init(rng, 5, h))
        self.aromatic_emb = _param(_emb_init(rng, 2, h))
        self.layers = []
        for _ in range(config.gin_layers):
            self.layers.append(
                {
                    "eps": _param(0.0),
                    "w1": _param(_linear_init(rng, h, h)),
                    "b1": _param(np.zeros(h)),
                    "w2": _param(_linear_init(rng, h, h)),
                    "b2": _param(np.zeros(h)),
                }
            )

    def parameters(self, prefix: str = "gin") -> dict[str, Tensor]:
        out = {
            f"{prefix}.element_emb": self.element_emb,
            f"{prefix}.degree_emb": self.degree_emb,
            f"{prefix}.charge_emb": self.charge_emb,
            f"{prefix}.aromatic_emb": self.aromatic_emb,
        }
        for i, layer in enumerate(self.layers):
            for key, tensor in layer.items():
                out[f"{prefix}.layer{i}.{key}"] = tensor
        return out

    @staticmethod
    def _atom_ids(graph: MolecularGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        element, degree, charge, aromatic = [], [], [], []
        for i, atom in enumerate(graph.atoms):
            try:
                element.append(ELEMENT_VOCAB.index(atom.element))
            except ValueError:
                element.append(len(ELEMENT_VOCAB))
            degree.append(min(graph.degree(i), 8))
            charge.append(min(max(atom.formal_charge, -2), 2) + 2)
            aromatic.append(int(atom.aromatic))
        return (np.array(element), np.array(degree), np.array(charge), np.array(aromatic))

    def encode(self, graph: MolecularGraph) -> Tensor:
        """Graph -> (1, hidden_dim) readout row."""
        n = len(graph.atoms)
        if n == 0:
            raise EmptyGraphError("cannot encode a graph with no atoms")
        el, deg, chg, aro = self._atom_ids(graph)
        h = T.add(
            T.add(T.embedding_lookup(self.element_emb, el), T.embedding_lookup(self.degree_emb, deg)),
            T.add(T.embedding_lookup(self.charge_emb, chg), T.embedding_lookup(self.aromatic_emb, aro)),
        )
        adj = np.zeros((n, n))
        for bond in graph.bonds:
            adj[bond.a, bond.b] = 1.0
            adj[bond.b, bond.a] = 1.0
        adj_t = Tensor(adj)
        for layer in self.layers:
            mixed = T.add(T.mul(h, T.add(layer["eps"], 1.0)), T.matmul(adj_t, h))
            hidden = T.relu(T.add(T.matmul(mixed, layer["w1"]), layer["b1"]))
            h = T.add(T.matmul(hidden, layer["w2"]), layer["b2"])
        selector = np.ones((1, n)) if self.config.gin_readout == "sum" else np.full((1, n), 1.0 / n)
        return T.matmul(Tensor(selector), h)


# ---------------------------------------------------------------------------
# Text encoder


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    out = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return out


class TextEncoder:
    """Single-head attention blocks over word embeddings with [PAD] masking."""

    def __init__(self, config: ModelConfig, vocab_size: int, rng: np.random.Generator):
        e = config.embed_dim
        f = 2 * e
        self.config = config
        self.vocab_size = vocab_size
        self.token_emb = _param(_emb_init(rng, vocab_size, e))
        self.positions = sinusoidal_positions(config.max_len, e)  # constant, not learned
        self.blocks = []
        for _ in range(config.text_blocks):
            self.blocks.append(
                {
                    "wq": _param(_linear_init(rng, e, e)),
                    "bq": _param(np.zeros(e)),
                    "wk": _param(_linear_init(rng, e, e)),
                    "bk": _param(np.zeros(e)),
                    "wv": _param(_linear_init(rng, e, e)),
                    "bv": _param(np.zeros(e)),
                    "wo": _param(_linear_init(rng, e, e)),
                    "bo": _param(np.zeros(e)),
                    "ffn_w1": _param(_linear_init(rng, e, f)),
                    "ffn_b1": _param(np.zeros(f)),
                    "ffn_w2": _param(_linear_init(rng, f, e)),
                    "ffn_b2": _param(np.zeros(e)),
                }
            )

    def parameters(self, prefix: str = "text") -> dict[str, Tensor]:
        out = {f"{prefix}.token_emb": self.token_emb}
        for i, block in enumerate(self.blocks):
            for key, tensor in block.items():
                out[f"{prefix}.block{i}.{key}"] = tensor
        return out

    def encode(self, ids: list[int]) -> Tensor:
        """Token ids -> (1, embed_dim) pooled row."""
        if len(ids) == 0:
            raise EmptyTokenListError("cannot encode an empty token list")
        if len(ids) > self.config.max_len:
            raise ValueError(f"sequence of {len(ids)} tokens exceeds max_len {self.config.max_len}")
        ids_arr = np.asarray(ids, dtype=np.int64)
        length = len(ids)
        nonpad = ids_arr != PAD_ID
        if not nonpad.any():
            raise EmptyTokenListError("token list holds only [PAD]")
        # -1e30 underflows to exactly zero attention after the softmax shift,
        # which is what makes pad-append invariance exact rather than approximate
        key_bias = Tensor(np.where(nonpad, 0.0, -1e30))
        scale = 1.0 / np.sqrt(self.config.embed_dim)

        x = T.add(T.embedding_lookup(self.token_emb, ids_arr), Tensor(self.positions[:length]))
        for block in self.blocks:
            q = T.add(T.matmul(x, block["wq"]), block["bq"])
            k = T.add(T.matmul(x, block["wk"]), block["bk"])
            v = T.add(T.matmul(x, block["wv"]), block["bv"])
            scores = T.add(T.scale(T.matmul(q, T.transpose(k)), scale), key_bias)
            attended = T.matmul(T.row_softmax(scores), v)
            x = T.add(x, T.add(T.matmul(attended, block["wo"]), block["bo"]))
            ffn = T.matmul(T.relu(T.add(T.matmul(x, block["ffn_w1"]), block["ffn_b1"])), block["ffn_w2"])
            x = T.add(x, T.add(ffn, block["ffn_b2"]))
        if self.config.text_pooling == "mean":
            selector = nonpad.astype(np.float64)[None, :] / nonpad.sum()
        else:
            selector = np.zeros((1, length))
            selector[0, 0] = 1.0  # [CLS] row
        return T.matmul(Tensor(selector), x)


# ---------------------------------------------------------------------------
# Projection heads and the combined model


class ProjectionHead:
    def __init__(self, in_dim: int, out_dim: int, mlp: bool, rng: np.random.Generator):
        self.mlp = mlp
        if mlp:
            self.w1 = _param(_linear_init(rng, in_dim, in_dim))
            self.b1 = _param(np.zeros(in_dim))
            self.w2 = _param(_linear_init(rng, in_dim, out_dim))
            self.b2 = _param(np.zeros(out_dim))
        else:
            self.w = _param(_linear_init(rng, in_dim, out_dim))
            self.b = _param(np.zeros(out_dim))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        if self.mlp:
            return {
                f"{prefix}.w1": self.w1,
                f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2,
                f"{prefix}.b2": self.b2,
            }
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def apply(self, x: Tensor) -> Tensor:
        if self.mlp:
            return T.add(T.matmul(T.relu(T.add(T.matmul(x, self.w1), self.b1)), self.w2), self.b2)
        return T.add(T.matmul(x, self.w), self.b)


class MolTextModel:
    def __init__(self, config: ModelConfig, vocab: dict[str, int], seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.vocab = vocab
        self.gin = GinEncoder(config, rng)
        self.text = TextEncoder(config, len(vocab), rng)
        self.proj_mol = ProjectionHead(config.hidden_dim, config.projection_dim, config.mlp_projection, rng)
        self.proj_text = ProjectionHead(config.embed_dim, config.projection_dim, config.mlp_projection, rng)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.gin.parameters("gin"))
        out.update(self.text.parameters("text"))
        out.update(self.proj_mol.parameters("proj_mol"))
        out.update(self.proj_text.parameters("proj_text"))
        return out

    def embed_molecule(self, graph: MolecularGraph) -> Tensor:
        """Graph -> joint-space vector of shape (projection_dim,)."""
        return T.reshape(self.proj_mol.apply(self.gin.encode(graph)), (self.config.projection_dim,))

    def embed_text(self, ids: list[int]) -> Tensor:
        """Token ids -> joint-space vector of shape (projection_dim,)."""
        return T.reshape(self.proj_text.apply(self.text.encode(ids)), (self.config.projection_dim,))

    def embed_molecules(self, graphs) -> Tensor:
        return T.concat_rows([self.embed_molecule(g) for g in graphs])

    def embed_texts(self, ids_batch) -> Tensor:
        return T.concat_rows([self.embed_text(ids) for ids in ids_batch])


# ---------------------------------------------------------------------------
# Checkpoints: magic "AMCK", u32 version, u32 header length, JSON header with
# the model config, vocabulary, and (name, shape, offset) per tensor, then the
# raw little-endian float64 payload.


def save_checkpoint(path: str, model: MolTextModel) -> None:
    params = model.parameters()
    entries = []
    offset = 0
    blobs = []
    for name, tensor in params.items():
        blob = tensor.data.astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(tensor.data.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "config": asdict(model.config),
        "vocab": model.vocab,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<4sII", AMCK_MAGIC, AMCK_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)  # atomic: never leaves a half-written checkpoint


def load_checkpoint(path: str) -> MolTextModel:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12:
            raise ValueError(f"{path}: truncated checkpoint header")
        magic, version, header_len = struct.unpack("<4sII", head)
        if magic != AMCK_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        if version != AMCK_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()

    config = ModelConfig(**header["config"])
    vocab = {str(k): int(v) for k, v in header["vocab"].items()}
    model = MolTextModel(config, vocab, seed=0)
    params = model.parameters()
    names_on_disk = {entry["name"] for entry in header["tensors"]}
    if names_on_disk != set(params):
        missing = sorted(set(params) - names_on_disk)
        extra = sorted(names_on_disk - set(params))
        raise ValueError(f"{path}: tensor names mismatch (missing {missing}, extra {extra})")
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        flat = np.frombuffer(payload, dtype="<f8", count=size, offset=start)
        tensor = params[entry["name"]]
        if tuple(tensor.data.shape) != shape:
            raise ValueError(f"{path}: shape mismatch for {entry['name']}")
        tensor.data = flat.reshape(shape).astype(np.float64).copy()
    return model
