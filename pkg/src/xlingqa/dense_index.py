"""Exact maximal-inner-product index over passage embeddings with binary
persistence.

File format: magic "XLIDX001", u32 LE dim, u64 LE count, count*dim
row-major float32 LE, then an id table of count records (u16 LE byte
length + UTF-8 bytes), then a u32 LE CRC32 of everything preceding.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import index_kernels

MAGIC = b"XLIDX001"


class IndexFormatError(Exception):
    """Base class for index file problems."""


class BadMagicError(IndexFormatError):
    pass


class TruncatedIndexError(IndexFormatError):
    pass


class ChecksumMismatchError(IndexFormatError):
    pass


@dataclass(frozen=True)
class RetrievalResult:
    passage_id: str
    score: float
    rank: int


class DenseIndex:
    """Immutable store of (passage_id, embedding) rows answering exact
    top-k inner-product queries."""

    def __init__(self, dim: int, ids: Sequence[str], matrix: np.ndarray):
        if matrix.shape != (len(ids), dim):
            raise ValueError("matrix shape does not match ids/dim")
        self.dim = dim
        self.ids = list(ids)
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self._ids_arr = np.asarray(self.ids, dtype=np.str_)
        self.id_to_pos = {pid: pos for pos, pid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)


def build(pairs: Iterable[tuple[str, np.ndarray]], dim: int) -> DenseIndex:
    """Build an index from (passage_id, vector) pairs.

    Raises on duplicate ids, dimension mismatches, and non-finite vectors.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    for passage_id, vector in pairs:
        if passage_id in seen:
            raise ValueError(f"duplicate passage_id: {passage_id}")
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (dim,):
            raise ValueError(
                f"vector for {passage_id} has dim {vec.shape}, expected ({dim},)")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite vector for {passage_id}")
        seen.add(passage_id)
        ids.append(passage_id)
        rows.append(vec)
    if rows:
        matrix = np.vstack(rows)
    else:
        matrix = np.empty((0, dim), dtype=np.float32)
    return DenseIndex(dim, ids, matrix)


def _check_query(index: DenseIndex, query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape != (index.dim,):
        raise ValueError(f"query dim {q.shape[0]} does not match index dim {index.dim}")
    return q


def search(index: DenseIndex, query: np.ndarray, k: int) -> list[RetrievalResult]:
    """Exact top-k by inner product; ties broken by smaller passage_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = _check_query(index, query)
    if len(index) == 0:
        return []
    score_vec = index_kernels.scores(index.matrix, q)
    top = index_kernels.top_k(score_vec, index._ids_arr, k)
    return [
        RetrievalResult(passage_id=index.ids[pos], score=float(score_vec[pos]), rank=rank)
        for rank, pos in enumerate(top)
    ]


def search_batch(index: DenseIndex, queries: Sequence[np.ndarray], k: int) -> list[list[RetrievalResult]]:
    """Elementwise identical to search; scores all queries in one pass."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(queries):
        return []
    q_mat = np.vstack([_check_query(index, q) for q in queries])
    if len(index) == 0:
        return [[] for _ in range(q_mat.shape[0])]
    score_mat = index_kernels.scores_batch(index.matrix, q_mat)
    results = []
    for qi in range(q_mat.shape[0]):
        score_vec = score_mat[qi]
        top = index_kernels.top_k(score_vec, index._ids_arr, k)
        results.append([
            RetrievalResult(passage_id=index.ids[pos], score=float(score_vec[pos]), rank=rank)
            for rank, pos in enumerate(top)
        ])
    return results


def save(index: DenseIndex, path) -> None:
    """Write the index atomically (temp file + rename)."""
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", index.dim)
    payload += struct.pack("<Q", len(index))
    payload += index.matrix.astype("<f4", copy=False).tobytes(order="C")
    for passage_id in index.ids:
        encoded = passage_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"passage_id too long to serialize: {passage_id[:40]}...")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load(path) -> DenseIndex:
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < len(MAGIC):
        raise TruncatedIndexError("file shorter than magic header")
    if blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic")
    offset = len(MAGIC)
    header = struct.calcsize("<I") + struct.calcsize("<Q")
    if len(blob) < offset + header + 4:
        raise TruncatedIndexError("file truncated in header")
    (dim,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    (count,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    matrix_bytes = count * dim * 4
    if len(blob) < offset + matrix_bytes:
        raise TruncatedIndexError("file truncated in vector block")
    matrix = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset)
    matrix = matrix.reshape(count, dim).copy() if count else np.empty((0, dim), dtype=np.float32)
    offset += matrix_bytes
    ids = []
    for _ in range(count):
        if len(blob) < offset + 2:
            raise TruncatedIndexError("file truncated in id table")
        (length,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if len(blob) < offset + length:
            raise TruncatedIndexError("file truncated in id table")
        ids.append(blob[offset:offset + length].decode("utf-8"))
        offset += length
    if len(blob) < offset + 4:
        raise TruncatedIndexError("file truncated before checksum")
    if len(blob) != offset + 4:
        raise IndexFormatError("trailing bytes after checksum")
    (stored_crc,) = struct.unpack_from("<I", blob, offset)
    actual_crc = zlib.crc32(blob[:offset]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumMismatchError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")
    return DenseIndex(dim, ids, matrix)
