"""Molecular graphs from SMILES, circular fingerprints, and Tanimoto similarity.

Covers the organic-subset SMILES grammar (B, C, N, O, P, S, F, Cl, Br, I,
aromatic lowercase forms, bracket atoms with charge and explicit hydrogens,
branches, ring closures, explicit bond orders). No valence model, no
kekulization, no aromaticity perception: aromatic flags come solely from
lowercase atoms and ':' bonds. Stereo markers are accepted and ignored.
Multi-fragment inputs ('.') are rejected.

Fingerprints are circular environment hashes: every atom gets an initial
invariant from its local features, then each iteration folds in the sorted
(bond order, neighbor invariant) pairs through 64-bit FNV-1a over a
fixed-width little-endian serialization. Each identifier sets bit
(id mod nbits). The result depends only on the graph isomorphism class,
never on atom input order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ORGANIC_TWO = ("Cl", "Br")
ORGANIC_ONE = ("B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ONE = ("b", "c", "n", "o", "p", "s")

BOND_SINGLE = "single"
BOND_DOUBLE = "double"
BOND_TRIPLE = "triple"
BOND_AROMATIC = "aromatic"

_BOND_FOR_SYMBOL = {"-": BOND_SINGLE, "=": BOND_DOUBLE, "#": BOND_TRIPLE, ":": BOND_AROMATIC}
_BOND_CODE = {BOND_SINGLE: 1, BOND_DOUBLE: 2, BOND_TRIPLE: 3, BOND_AROMATIC: 4}

AMFP_MAGIC = b"AMFP"
AMFP_VERSION = 1


class SmilesError(ValueError):
    """Base class for SMILES parse failures."""


class EmptyInputError(SmilesError):
    pass


class UnbalancedParenthesisError(SmilesError):
    pass


class UnclosedRingBondError(SmilesError):
    pass


class UnknownAtomSymbolError(SmilesError):
    pass


class MultiFragmentError(SmilesError):
    pass


class BitWidthMismatchError(ValueError):
    """Tanimoto between fingerprints of different widths."""


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    # None means "not written in the input"; bracket atoms may pin a count.
    explicit_h: int | None = None


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: str


@dataclass
class MolecularGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond endpoint out of range: {bond}")
            if bond.a == bond.b:
                raise ValueError(f"self bond on atom {bond.a}")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond between atoms {key}")
            seen.add(key)

    def neighbors(self, idx: int) -> list[tuple[int, str]]:
        out = []
        for bond in self.bonds:
            if bond.a == idx:
                out.append((bond.b, bond.order))
            elif bond.b == idx:
                out.append((bond.a, bond.order))
        return out

    def degree(self, idx: int) -> int:
        return sum(1 for bond in self.bonds if idx in (bond.a, bond.b))


def _parse_bracket(body: str, pos: int) -> Atom:
    """Parse the inside of a bracket atom, e.g. 'NH4+' or 'O-' or 'C@@H'."""
    if not body:
        raise UnknownAtomSymbolError(f"empty bracket atom at position {pos}")
    i = 0
    aromatic = False
    if body[0].isupper():
        element = body[0]
        i = 1
        if i < len(body) and body[i].islower() and body[i] not in "bcnops@h":
            # Two-letter element; lowercase aromatic letters never extend one.
            element += body[i]
            i += 1
    elif body[0] in AROMATIC_ONE:
        element = body[0].upper()
        aromatic = True
        i = 1
    else:
        raise UnknownAtomSymbolError(f"bad element in bracket atom '[{body}]' at position {pos}")

    charge = 0
    explicit_h = None
    while i < len(body):
        c = body[i]
        if c == "@":
            i += 1  # chirality, ignored
        elif c == "H":
            i += 1
            j = i
            while j < len(body) and body[j].isdigit():
                j += 1
            explicit_h = int(body[i:j]) if j > i else 1
            i = j
        elif c in "+-":
            sign = 1 if c == "+" else -1
            j = i + 1
            if j < len(body) and body[j].isdigit():
                k = j
                while k < len(body) and body[k].isdigit():
                    k += 1
                charge = sign * int(body[j:k])
                i = k
            else:
                run = 1
                while j < len(body) and body[j] == c:
                    run += 1
                    j += 1
                charge = sign * run
                i = j
        else:
            raise UnknownAtomSymbolError(f"bad token '{c}' in bracket atom '[{body}]' at position {pos}")
    return Atom(element=element, aromatic=aromatic, formal_charge=charge, explicit_h=explicit_h)


def parse_smiles(smiles: str) -> MolecularGraph:
    """Parse a single-fragment SMILES string into a MolecularGraph.

    Raises EmptyInputError, UnbalancedParenthesisError, UnclosedRingBondError,
    UnknownAtomSymbolError, MultiFragmentError (all SmilesError subclasses).
    """
    s = smiles.strip()
    if not s:
        raise EmptyInputError("empty SMILES")

    atoms: list[Atom] = []
    bonds: list[dict] = []  # staged as dicts, validated once at the end
    bond_keys: set[tuple[int, int]] = set()
    prev: int | None = None
    pending: str | None = None
    branch_stack: list[int | None] = []
    open_rings: dict[str, tuple[int, str | None]] = {}

    def attach(new_idx: int):
        nonlocal prev, pending
        if prev is not None:
            _add_bond(prev, new_idx, pending)
        prev = new_idx
        pending = None

    def _add_bond(a: int, b: int, symbol_order: str | None):
        if a == b:
            raise SmilesError(f"ring closure bonds atom {a} to itself")
        key = (min(a, b), max(a, b))
        if key in bond_keys:
            raise SmilesError(f"duplicate bond between atoms {key}")
        if symbol_order is None:
            order = BOND_AROMATIC if atoms[a].aromatic and atoms[b].aromatic else BOND_SINGLE
        else:
            order = symbol_order
        bond_keys.add(key)
        bonds.append({"a": a, "b": b, "order": order})

    def close_ring(tag: str, pos: int):
        nonlocal pending
        if prev is None:
            raise SmilesError(f"ring bond digit before any atom at position {pos}")
        if tag in open_rings:
            other, other_pending = open_rings.pop(tag)
            if pending is not None and other_pending is not None and pending != other_pending:
                raise SmilesError(f"conflicting bond orders on ring closure {tag}")
            _add_bond(other, prev, pending if pending is not None else other_pending)
        else:
            open_rings[tag] = (prev, pending)
        pending = None

    i = 0
    while i < len(s):
        c = s[i]
        if c == ".":
            raise MultiFragmentError("multi-fragment SMILES is not supported")
        if c in "-=#:":
            pending = _BOND_FOR_SYMBOL[c]
            i += 1
        elif c in "/\\":
            i += 1  # cis/trans markers carry no information here
        elif c == "(":
            if prev is None:
                raise UnbalancedParenthesisError(f"branch opened before any atom at position {i}")
            branch_stack.append(prev)
            i += 1
        elif c == ")":
            if not branch_stack:
                raise UnbalancedParenthesisError(f"unmatched ')' at position {i}")
            prev = branch_stack.pop()
            i += 1
        elif c.isdigit():
            close_ring(c, i)
            i += 1
        elif c == "%":
            tag = s[i + 1 : i + 3]
            if len(tag) < 2 or not tag.isdigit():
                raise SmilesError(f"'%' ring tag needs two digits at position {i}")
            close_ring(tag, i)
            i += 3
        elif c == "[":
            end = s.find("]", i)
            if end < 0:
                raise SmilesError(f"unclosed bracket atom at position {i}")
            atoms.append(_parse_bracket(s[i + 1 : end], i))
            attach(len(atoms) - 1)
            i = end + 1
        elif s[i : i + 2] in ORGANIC_TWO:
            atoms.append(Atom(element=s[i : i + 2]))
            attach(len(atoms) - 1)
            i += 2
        elif c in ORGANIC_ONE:
            atoms.append(Atom(element=c))
            attach(len(atoms) - 1)
            i += 1
        elif c in AROMATIC_ONE:
            atoms.append(Atom(element=c.upper(), aromatic=True))
            attach(len(atoms) - 1)
            i += 1
        else:
            raise UnknownAtomSymbolError(f"unknown atom symbol '{c}' at position {i}")

    if branch_stack:
        raise UnbalancedParenthesisError(f"{len(branch_stack)} unclosed '('")
    if open_rings:
        raise UnclosedRingBondError(f"unclosed ring bonds: {sorted(open_rings)}")
    if not atoms:
        raise EmptyInputError("SMILES contains no atoms")
    return MolecularGraph(atoms=atoms, bonds=[Bond(**b) for b in bonds])


# ---------------------------------------------------------------------------
# Circular fingerprints

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def _element_code(element: str) -> int:
    code = ord(element[0]) << 8
    if len(element) > 1:
        code |= ord(element[1])
    return code


def _initial_invariant(graph: MolecularGraph, idx: int, heavy_degree: int) -> int:
    atom = graph.atoms[idx]
    h = atom.explicit_h if atom.explicit_h is not None else 255
    return _fnv1a(
        struct.pack(
            "<5Q",
            _element_code(atom.element),
            heavy_degree,
            atom.formal_charge & _U64,
            int(atom.aromatic),
            h,
        )
    )


@dataclass(frozen=True)
class Fingerprint:
    nbits: int
    words: np.ndarray  # uint64, little-endian packed, length nbits // 64

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.words, other.words))

    @property
    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def bits(self) -> list[int]:
        out = []
        for w, word in enumerate(self.words):
            word = int(word)
            while word:
                low = word & -word
                out.append(w * 64 + low.bit_length() - 1)
                word ^= low
        return out

    @classmethod
    def from_bits(cls, nbits: int, indices) -> "Fingerprint":
        words = np.zeros(nbits // 64, dtype=np.uint64)
        for idx in indices:
            if not 0 <= idx < nbits:
                raise ValueError(f"bit index {idx} out of range for {nbits} bits")
            words[idx // 64] |= np.uint64(1) << np.uint64(idx % 64)
        return cls(nbits=nbits, words=words)


def compute_fingerprint(graph: MolecularGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Hash circular atom environments of radius 0..radius into an nbits vector."""
    if nbits <= 0 or nbits % 64 != 0:
        raise ValueError("nbits must be a positive multiple of 64")
    if not 0 <= radius <= 4:
        raise ValueError("radius must be in 0..4")
    if not graph.atoms:
        raise ValueError("cannot fingerprint an empty graph")

    n = len(graph.atoms)
    neighbor_lists = [graph.neighbors(i) for i in range(n)]
    heavy = [sum(1 for j, _ in neighbor_lists[i] if graph.atoms[j].element != "H") for i in range(n)]

    invariants = [_initial_invariant(graph, i, heavy[i]) for i in range(n)]
    identifiers = set(invariants)
    for _ in range(radius):
        nxt = []
        for i in range(n):
            pairs = sorted((_BOND_CODE[order], invariants[j]) for j, order in neighbor_lists[i])
            buf = struct.pack("<Q", invariants[i])
            for code, inv in pairs:
                buf += struct.pack("<QQ", code, inv)
            nxt.append(_fnv1a(buf))
        invariants = nxt
        identifiers.update(invariants)

    return Fingerprint.from_bits(nbits, {ident % nbits for ident in identifiers})


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a AND b| / |a OR b|; two all-zero fingerprints count as identical (1.0)."""
    if a.nbits != b.nbits:
        raise BitWidthMismatchError(f"fingerprint widths differ: {a.nbits} vs {b.nbits}")
    inter = int(np.bitwise_count(a.words & b.words).sum())
    union = a.popcount + b.popcount - inter
    return 1.0 if union == 0 else inter / union


# ---------------------------------------------------------------------------
# Fingerprint file format: magic "AMFP", u32 version, u32 nbits, u64 count,
# then count x (nbits/64) little-endian u64 words.


def write_fingerprints(path: str, fingerprints: list[Fingerprint]) -> None:
    if not fingerprints:
        raise ValueError("refusing to write an empty fingerprint file")
    nbits = fingerprints[0].nbits
    for fp in fingerprints:
        if fp.nbits != nbits:
            raise BitWidthMismatchError("all fingerprints in a file must share one width")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIQ", AMFP_MAGIC, AMFP_VERSION, nbits, len(fingerprints)))
        for fp in fingerprints:
            fh.write(fp.words.astype("<u8").tobytes())


def read_fingerprints(path: str) -> list[Fingerprint]:
    with open(path, "rb") as fh:
        header = fh.read(20)
        if len(header) < 20:
            raise ValueError(f"{path}: truncated fingerprint file header")
        magic, version, nbits, count = struct.unpack("<4sIIQ", header)
        if magic != AMFP_MAGIC:
            raise ValueError(f"{path}: not a fingerprint file (bad magic {magic!r})")
        if version != AMFP_VERSION:
            raise ValueError(f"{path}: unsupported fingerprint file version {version}")
        if nbits <= 0 or nbits % 64 != 0:
            raise ValueError(f"{path}: corrupt header, nbits={nbits}")
        words_per = nbits // 64
        body = fh.read()
    expected = count * words_per * 8
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype="<u8").astype(np.uint64)
    return [
        Fingerprint(nbits=nbits, words=flat[i * words_per : (i + 1) * words_per].copy())
        for i in range(count)
    ]
