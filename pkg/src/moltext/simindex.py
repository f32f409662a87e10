"""Exact top-k Tanimoto neighbor search over a fingerprint store.

Brute force over packed u64 words, vectorized per query row. Results are
exact and fully deterministic: neighbors sort by descending similarity with
ties broken by ascending id, and the thread count changes wall time only,
never a single output byte. Self-similarity is always excluded; duplicate
fingerprints are legal neighbors.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chem import BitWidthMismatchError, Fingerprint

AMIX_MAGIC = b"AMIX"
AMIX_VERSION = 1


class EmptyStoreError(ValueError):
    """Raised when asked to index zero fingerprints."""


@dataclass
class SimilarityIndex:
    k: int
    nbits: int
    # neighbors[i] is exactly min(k, n-1) pairs of (neighbor id, similarity)
    neighbors: list[list[tuple[int, float]]]

    @property
    def n(self) -> int:
        return len(self.neighbors)

    def neighbor_ids(self, i: int) -> list[int]:
        return [nid for nid, _ in self.neighbors[i]]


def _pack(fingerprints: list[Fingerprint]) -> tuple[np.ndarray, np.ndarray]:
    nbits = fingerprints[0].nbits
    for fp in fingerprints:
        if fp.nbits != nbits:
            raise BitWidthMismatchError("all fingerprints in a store must share one width")
    words = np.stack([fp.words for fp in fingerprints])
    pops = np.bitwise_count(words).sum(axis=1).astype(np.int64)
    return words, pops


def _sim_rows(words: np.ndarray, pops: np.ndarray, rows: range) -> np.ndarray:
    """Tanimoto of each row in `rows` against the whole store."""
    inter = np.bitwise_count(words[rows][:, None, :] & words[None, :, :]).sum(axis=2)
    union = pops[rows][:, None] + pops[None, :] - inter
    sims = np.divide(inter, union, out=np.ones_like(union, dtype=np.float64), where=union > 0)
    return sims


def build_topk(fingerprints: list[Fingerprint], k: int, threads: int = 1) -> SimilarityIndex:
    """Exact top-k neighbor lists for every fingerprint in the store."""
    if not fingerprints:
        raise EmptyStoreError("cannot build an index over zero fingerprints")
    if k < 1:
        raise ValueError("k must be >= 1")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    words, pops = _pack(fingerprints)
    n = len(fingerprints)
    take = min(k, n - 1)
    ids = np.arange(n)

    def topk_chunk(rows: range) -> list[list[tuple[int, float]]]:
        sims = _sim_rows(words, pops, rows)
        out = []
        for local, i in enumerate(rows):
            row = sims[local].copy()
            row[i] = -1.0  # self never counts
            order = np.lexsort((ids, -row))[:take]
            out.append([(int(j), float(row[j])) for j in order])
        return out

    chunk = 64  # keeps the (chunk, n, words) intermediate small
    ranges = [range(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if threads == 1 or len(ranges) == 1:
        chunks = [topk_chunk(r) for r in ranges]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(topk_chunk, ranges))
    neighbors = [entry for part in chunks for entry in part]
    return SimilarityIndex(k=k, nbits=fingerprints[0].nbits, neighbors=neighbors)


def batch_tanimoto(source: list[Fingerprint], batch: list[Fingerprint]) -> np.ndarray:
    """Matrix S with S[i, j] = tanimoto(source[i], batch[j])."""
    if not source or not batch:
        raise EmptyStoreError("batch_tanimoto needs non-empty fingerprint lists")
    nbits = source[0].nbits
    for fp in list(source) + list(batch):
        if fp.nbits != nbits:
            raise BitWidthMismatchError("fingerprint widths differ")
    a = np.stack([fp.words for fp in source])
    b = np.stack([fp.words for fp in batch])
    pa = np.bitwise_count(a).sum(axis=1).astype(np.int64)
    pb = np.bitwise_count(b).sum(axis=1).astype(np.int64)
    inter = np.bitwise_count(a[:, None, :] & b[None, :, :]).sum(axis=2)
    union = pa[:, None] + pb[None, :] - inter
    return np.divide(inter, union, out=np.ones_like(union, dtype=np.float64), where=union > 0)


# ---------------------------------------------------------------------------
# Index file format: magic "AMIX", u32 version, u32 k, u64 n, then per
# molecule a u32 entry count followed by (u64 neighbor id, f64 similarity).


def write_index(path: str, index: SimilarityIndex) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIIQ", AMIX_MAGIC, AMIX_VERSION, index.k, index.n))
        for entries in index.neighbors:
            fh.write(struct.pack("<I", len(entries)))
            for nid, sim in entries:
                fh.write(struct.pack("<Qd", nid, sim))


def read_index(path: str) -> SimilarityIndex:
    with open(path, "rb") as fh:
        header = fh.read(20)
        if len(header) < 20:
            raise ValueError(f"{path}: truncated index header")
        magic, version, k, n = struct.unpack("<4sIIQ", header)
        if magic != AMIX_MAGIC:
            raise ValueError(f"{path}: not an index file (bad magic {magic!r})")
        if version != AMIX_VERSION:
            raise ValueError(f"{path}: unsupported index version {version}")
        neighbors = []
        for i in range(n):
            raw = fh.read(4)
            if len(raw) < 4:
                raise ValueError(f"{path}: truncated at molecule {i}")
            (count,) = struct.unpack("<I", raw)
            body = fh.read(16 * count)
            if len(body) < 16 * count:
                raise ValueError(f"{path}: truncated entries at molecule {i}")
            entries = [struct.unpack_from("<Qd", body, 16 * j) for j in range(count)]
            neighbors.append([(int(nid), float(sim)) for nid, sim in entries])
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after {n} molecules")
    # nbits is not stored in the file; it only matters while building
    return SimilarityIndex(k=k, nbits=0, neighbors=neighbors)
