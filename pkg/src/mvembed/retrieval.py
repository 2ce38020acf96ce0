"""Embedding corpus and exhaustive cosine-distance ranking."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MVEM_MAGIC = b"MVEM"


class RetrievalError(ValueError):
    pass


@dataclass
class EmbeddingIndex:
    """Ordered corpus of embeddings with a class label per model id."""

    ids: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)
    vectors: np.ndarray | None = None  # (N, D) float32
    zero_norm_warnings: int = 0

    def add(self, model_id: str, label: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float32)
        if not np.all(np.isfinite(vector)):
            raise RetrievalError(f"{model_id}: embedding contains NaN/Inf")
        if model_id in self.ids:
            raise RetrievalError(f"duplicate model id {model_id!r}")
        if self.vectors is None:
            self.vectors = vector[None]
        else:
            if vector.shape != (self.vectors.shape[1],):
                raise RetrievalError(
                    f"{model_id}: dimension {vector.shape} != {self.vectors.shape[1]}"
                )
            self.vectors = np.vstack([self.vectors, vector[None]])
        self.ids.append(model_id)
        self.labels.append(label)

    def __len__(self) -> int:
        return len(self.ids)

    def label_of(self, model_id: str) -> str:
        return self.labels[self.ids.index(model_id)]


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[tuple[str, float], ...]  # (id, distance) ascending, query excluded


def cosine_distance(u: np.ndarray, v: np.ndarray, index: EmbeddingIndex | None = None) -> float:
    """1 - cos(u, v) in [0, 2]; a zero-norm vector yields 1 and a warning count."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise RetrievalError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        if index is not None:
            index.zero_norm_warnings += 1
        return 1.0
    return float(1.0 - (u @ v) / (nu * nv))


def rank_all(index: EmbeddingIndex, query_id: str) -> RankedList:
    """All non-query items by ascending cosine distance; distance ties break
    by lexicographic id."""
    if query_id not in index.ids:
        raise RetrievalError(f"unknown query id {query_id!r}")
    qpos = index.ids.index(query_id)
    q = index.vectors[qpos]
    entries = [
        (index.ids[i], cosine_distance(q, index.vectors[i], index))
        for i in range(len(index))
        if i != qpos
    ]
    entries.sort(key=lambda e: (e[1], e[0]))
    return RankedList(query_id, tuple(entries))


def write_index(index: EmbeddingIndex, path: str | Path) -> None:
    dim = 0 if index.vectors is None else index.vectors.shape[1]
    with open(path, "wb") as f:
        f.write(MVEM_MAGIC)
        f.write(struct.pack("<II", len(index), dim))
        for i, (mid, label) in enumerate(zip(index.ids, index.labels)):
            mb, lb = mid.encode(), label.encode()
            f.write(struct.pack("<I", len(mb)) + mb)
            f.write(struct.pack("<I", len(lb)) + lb)
            f.write(index.vectors[i].astype("<f4").tobytes())


def read_index(path: str | Path) -> EmbeddingIndex:
    raw = Path(path).read_bytes()
    if raw[:4] != MVEM_MAGIC:
        raise RetrievalError(f"{path}: bad magic {raw[:4]!r}")
    count, dim = struct.unpack("<II", raw[4:12])
    off = 12
    index = EmbeddingIndex()
    for _ in range(count):
        (n,) = struct.unpack_from("<I", raw, off); off += 4
        mid = raw[off : off + n].decode(); off += n
        (n,) = struct.unpack_from("<I", raw, off); off += 4
        label = raw[off : off + n].decode(); off += n
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).copy(); off += 4 * dim
        index.add(mid, label, vec)
    if off != len(raw):
        raise RetrievalError(f"{path}: {len(raw) - off} trailing bytes")
    return index


def write_ranked_csv(ranked: list[RankedList], path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("query_id,rank,item_id,distance\n")
        for rl in ranked:
            for rank, (item, dist) in enumerate(rl.entries, start=1):
                f.write(f"{rl.query_id},{rank},{item},{dist:.9g}\n")
