"""Binary containers shared across the pipeline.

All multi-byte fields are little-endian. Layouts:

* PCEM (embeddings): magic ``PCEM``, u32 version=1, u64 n, u32 d,
  u32 dtype=0 (float32), then n*d float32 row-major.
* PCLV (assignments): magic ``PCLV``, u32 version=1, u64 n, u32 k,
  k u32 cardinalities, then n*k u32 row-major.
* PCDS (datasets): magic ``PCDS``, u32 version=1, u64 n, u32 cols,
  u32 dtype (1 = u32 tokens, 2 = u8 pixels), then the rows.

Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import DataError
from .induce import EmbeddingMatrix, LVAssignment

_EM_HEADER = struct.Struct("<4sIQII")
_LV_HEADER = struct.Struct("<4sIQI")
_DS_HEADER = struct.Struct("<4sIQII")

PCDS_TOKENS = 1
PCDS_PIXELS = 2


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_embeddings(path: str, embeddings: EmbeddingMatrix | np.ndarray) -> None:
    data = embeddings.data if isinstance(embeddings, EmbeddingMatrix) else embeddings
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise DataError("embeddings must be 2-D")
    header = _EM_HEADER.pack(b"PCEM", 1, data.shape[0], data.shape[1], 0)
    _atomic_write_bytes(path, header + data.tobytes())


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_embeddings(path: str, provenance: str | None = None) -> EmbeddingMatrix:
    raw = _read_bytes(path)
    if len(raw) < _EM_HEADER.size:
        raise DataError(f"{path}: truncated embedding file")
    magic, version, n, d, dtype = _EM_HEADER.unpack_from(raw)
    if magic != b"PCEM":
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise DataError(f"{path}: unsupported embedding version {version}")
    if dtype != 0:
        raise DataError(f"{path}: unsupported embedding dtype code {dtype}")
    expected = _EM_HEADER.size + n * d * 4
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_EM_HEADER.size).reshape(n, d)
    return EmbeddingMatrix(data.copy(), provenance or os.path.basename(path))


def write_assignments(path: str, assignment: LVAssignment) -> None:
    z = np.ascontiguousarray(assignment.z, dtype="<u4")
    header = _LV_HEADER.pack(b"PCLV", 1, z.shape[0], z.shape[1])
    cards = np.asarray(assignment.cards, dtype="<u4").tobytes()
    _atomic_write_bytes(path, header + cards + z.tobytes())


def read_assignments(path: str) -> LVAssignment:
    raw = _read_bytes(path)
    if len(raw) < _LV_HEADER.size:
        raise DataError(f"{path}: truncated assignment file")
    magic, version, n, k = _LV_HEADER.unpack_from(raw)
    if magic != b"PCLV":
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise DataError(f"{path}: unsupported assignment version {version}")
    offset = _LV_HEADER.size
    expected = offset + 4 * k + 4 * n * k
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    cards = np.frombuffer(raw, dtype="<u4", offset=offset, count=k)
    z = np.frombuffer(raw, dtype="<u4", offset=offset + 4 * k).reshape(n, k)
    return LVAssignment(z.astype(np.int64), cards=tuple(int(c) for c in cards))


def write_dataset(path: str, data: np.ndarray, dtype_code: int) -> None:
    if dtype_code == PCDS_TOKENS:
        rows = np.ascontiguousarray(data, dtype="<u4")
    elif dtype_code == PCDS_PIXELS:
        rows = np.ascontiguousarray(data, dtype=np.uint8)
    else:
        raise DataError(f"unknown dataset dtype code {dtype_code}")
    header = _DS_HEADER.pack(b"PCDS", 1, rows.shape[0], rows.shape[1], dtype_code)
    _atomic_write_bytes(path, header + rows.tobytes())


def read_dataset(path: str) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < _DS_HEADER.size:
        raise DataError(f"{path}: truncated dataset file")
    magic, version, n, cols, dtype_code = _DS_HEADER.unpack_from(raw)
    if magic != b"PCDS":
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise DataError(f"{path}: unsupported dataset version {version}")
    offset = _DS_HEADER.size
    if dtype_code == PCDS_TOKENS:
        expected = offset + 4 * n * cols
        if len(raw) != expected:
            raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
        rows = np.frombuffer(raw, dtype="<u4", offset=offset).reshape(n, cols)
    elif dtype_code == PCDS_PIXELS:
        expected = offset + n * cols
        if len(raw) != expected:
            raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
        rows = np.frombuffer(raw, dtype=np.uint8, offset=offset).reshape(n, cols)
    else:
        raise DataError(f"{path}: unknown dataset dtype code {dtype_code}")
    return rows.astype(np.int64)


def read_text_dataset(path: str) -> np.ndarray:
    """Whitespace-separated integers, one sample per line."""
    rows = []
    try:
        fh = open(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer token") from exc
    if not rows:
        raise DataError(f"{path}: empty dataset")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.int64)


def load_dataset_file(path: str) -> np.ndarray:
    if path.endswith(".txt"):
        return read_text_dataset(path)
    return read_dataset(path)
