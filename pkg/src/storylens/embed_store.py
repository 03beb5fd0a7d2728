"""Embedding store: file ingestion and exact cosine top-k search.

Vectors are held as float32 rows of one matrix (dot products accumulate in
float64); L2-normalization at ingest is on by default so that dot product
equals cosine. Search is an exact brute-force scan, sorted score descending
with id-ascending tie-break.

Two file formats:
- jsonl: one ``{"id": ..., "vector": [...]}`` object per line.
- packed (bit-exact): magic ``EMBV1\\0``, u8 version = 1, u32 LE dimension,
  u64 LE count, then per record u16 LE id byte-length, id UTF-8 bytes,
  dimension x f32 LE.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PACKED_MAGIC = b"EMBV1\x00"
PACKED_VERSION = 1
FORMATS = ("jsonl", "packed")


class StoreError(ValueError):
    """Base class for ingest/export failures."""


class StoreFormatError(StoreError):
    """Malformed file content; message carries line number or byte offset."""


class DimensionMismatchError(StoreError):
    pass


class DuplicateIdError(StoreError):
    pass


@dataclass(frozen=True)
class StoreManifest:
    dimension: int
    count: int
    normalized: bool


@dataclass(frozen=True)
class ScoredHit:
    id: str
    score: float


class EmbeddingStore:
    """Immutable after construction; concurrent topk calls are safe."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray, normalized: bool):
        self._ids = list(ids)
        self._matrix = np.asarray(matrix, dtype=np.float32)
        self._normalized = normalized
        # Pre-sorting ids once makes the per-query tie-break cheap.
        self._id_rank = {rec_id: rank for rank, rec_id in enumerate(sorted(self._ids))}
        if not self._normalized and len(self._ids):
            self._norms = np.linalg.norm(self._matrix.astype(np.float64), axis=1)
        else:
            self._norms = None

    @property
    def manifest(self) -> StoreManifest:
        dim = int(self._matrix.shape[1]) if self._matrix.ndim == 2 else 0
        return StoreManifest(dimension=dim, count=len(self._ids),
                             normalized=self._normalized)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, rec_id: str) -> np.ndarray:
        idx = self._ids.index(rec_id)
        return self._matrix[idx].copy()

    def topk(self, query: Sequence[float], k: int) -> list[ScoredHit]:
        """Exact top-k by cosine similarity.

        Result length is min(k, count); an empty store yields an empty list.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        count = len(self._ids)
        if count == 0:
            return []
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self._matrix.shape[1]:
            raise DimensionMismatchError(
                f"query dimension {q.shape[0]} != store dimension "
                f"{self._matrix.shape[1]}")
        qnorm = float(np.linalg.norm(q))
        if qnorm == 0.0:
            raise ValueError("zero query vector has no direction")
        q = q / qnorm
        # float32 storage, float64 accumulation
        scores = self._matrix.astype(np.float64) @ q
        if self._norms is not None:
            scores = scores / self._norms
        order = sorted(range(count),
                       key=lambda i: (-scores[i], self._id_rank[self._ids[i]]))
        return [ScoredHit(id=self._ids[i], score=float(scores[i]))
                for i in order[:k]]

    def export(self, path: str | Path, format: str = "jsonl") -> None:
        """Write the store to disk; an empty store writes a valid empty file."""
        _check_format(format)
        path = Path(path)
        if format == "jsonl":
            with path.open("w", encoding="utf-8") as fh:
                for rec_id, row in zip(self._ids, self._matrix):
                    # float() widens f32 exactly; json round-trips the value
                    fh.write(json.dumps(
                        {"id": rec_id, "vector": [float(x) for x in row]}) + "\n")
            return
        dim = int(self._matrix.shape[1]) if self._matrix.size else 0
        with path.open("wb") as fh:
            fh.write(PACKED_MAGIC)
            fh.write(struct.pack("<BIQ", PACKED_VERSION, dim, len(self._ids)))
            for rec_id, row in zip(self._ids, self._matrix):
                id_bytes = rec_id.encode("utf-8")
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(row.astype("<f4").tobytes())


def ingest(path: str | Path, format: str = "jsonl",
           normalize: bool = True) -> EmbeddingStore:
    """Load a store from disk.

    All records must share one dimension; ids must be unique and non-empty;
    zero vectors are rejected (they cannot be normalized and have no cosine).
    With normalize on (the default), unit vectors are recomputed in float64
    and stored as float32; with normalize off the file's component values are
    kept as-is.
    """
    _check_format(format)
    path = Path(path)
    if format == "jsonl":
        records = list(_read_jsonl(path))
    else:
        records = list(_read_packed(path))
    ids: list[str] = []
    seen: set[str] = set()
    rows: list[np.ndarray] = []
    dim: int | None = None
    for where, rec_id, vec in records:
        if not isinstance(rec_id, str) or not rec_id:
            raise StoreFormatError(f"{where}: id must be a non-empty string")
        if rec_id in seen:
            raise DuplicateIdError(f"{where}: duplicate id {rec_id!r}")
        seen.add(rec_id)
        if dim is None:
            dim = len(vec)
            if dim < 1:
                raise StoreFormatError(f"{where}: empty vector for id {rec_id!r}")
        elif len(vec) != dim:
            raise DimensionMismatchError(
                f"{where}: id {rec_id!r} has dimension {len(vec)}, expected {dim}")
        row = np.asarray(vec, dtype=np.float64)
        if not np.all(np.isfinite(row)):
            raise StoreFormatError(f"{where}: non-finite component in id {rec_id!r}")
        norm = float(np.linalg.norm(row))
        if norm == 0.0:
            raise StoreError(f"{where}: zero vector for id {rec_id!r} "
                             "cannot be normalized")
        if normalize:
            row = row / norm
        ids.append(rec_id)
        rows.append(row.astype(np.float32))
    matrix = np.vstack(rows) if rows else np.zeros((0, dim or 0), dtype=np.float32)
    return EmbeddingStore(ids, matrix, normalized=normalize)


def _check_format(format: str) -> None:
    if format not in FORMATS:
        raise ValueError(f"unknown store format {format!r}; expected one of {FORMATS}")


def _read_jsonl(path: Path) -> Iterable[tuple[str, str, list]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StoreFormatError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "vector" not in obj:
                raise StoreFormatError(f"{where}: expected object with id and vector")
            vec = obj["vector"]
            if not isinstance(vec, list) or not all(
                    isinstance(x, (int, float)) for x in vec):
                raise StoreFormatError(f"{where}: vector must be a number array")
            yield where, obj["id"], vec


def _read_packed(path: Path) -> Iterable[tuple[str, str, np.ndarray]]:
    data = path.read_bytes()
    header_len = len(PACKED_MAGIC) + struct.calcsize("<BIQ")
    if len(data) < header_len:
        raise StoreFormatError(f"{path.name}: truncated header at byte {len(data)}")
    if data[:len(PACKED_MAGIC)] != PACKED_MAGIC:
        raise StoreFormatError(f"{path.name}: bad magic at byte 0")
    version, dim, count = struct.unpack_from("<BIQ", data, len(PACKED_MAGIC))
    if version != PACKED_VERSION:
        raise StoreFormatError(f"{path.name}: unsupported version {version}")
    offset = header_len
    for index in range(count):
        if offset + 2 > len(data):
            raise StoreFormatError(
                f"{path.name}: truncated id length at byte {offset} (record {index})")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + 4 * dim > len(data):
            raise StoreFormatError(
                f"{path.name}: truncated record {index} at byte {offset}")
        rec_id = data[offset:offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
        yield f"{path.name}@{offset}", rec_id, vec
    if offset != len(data):
        raise StoreFormatError(
            f"{path.name}: {len(data) - offset} trailing bytes after record {count}")
