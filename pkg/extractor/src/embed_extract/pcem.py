"""PCEM embedding files and the PCDS/plain-text dataset readers.

These byte layouts are the interface contract with the circuit engine; this
package implements them independently and only shares the files.

PCEM: magic ``PCEM``, u32 version=1, u64 n, u32 d, u32 dtype=0 (float32),
then n*d little-endian float32 row-major. PCDS: magic ``PCDS``, u32
version=1, u64 n, u32 cols, u32 dtype (1 = u32 tokens, 2 = u8 pixels).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

_EM_HEADER = struct.Struct("<4sIQII")
_DS_HEADER = struct.Struct("<4sIQII")


class FormatError(ValueError):
    pass


def atomic_write_bytes(path: str, payload: bytes) -> None:
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


def write_pcem(path: str, rows: np.ndarray) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise FormatError("embeddings must be 2-D")
    if not np.all(np.isfinite(rows)):
        raise FormatError("embeddings contain NaN/Inf")
    header = _EM_HEADER.pack(b"PCEM", 1, rows.shape[0], rows.shape[1], 0)
    atomic_write_bytes(path, header + rows.tobytes())


def read_pcem(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    validate_pcem_bytes(raw, name=path)
    _, _, n, d, _ = _EM_HEADER.unpack_from(raw)
    return np.frombuffer(raw, dtype="<f4", offset=_EM_HEADER.size).reshape(n, d).copy()


def validate_pcem_bytes(raw: bytes, name: str = "<bytes>") -> None:
    if len(raw) < _EM_HEADER.size:
        raise FormatError(f"{name}: truncated PCEM header")
    magic, version, n, d, dtype = _EM_HEADER.unpack_from(raw)
    if magic != b"PCEM":
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != 1:
        raise FormatError(f"{name}: unsupported version {version}")
    if dtype != 0:
        raise FormatError(f"{name}: unsupported dtype code {dtype}")
    expected = _EM_HEADER.size + n * d * 4
    if len(raw) != expected:
        raise FormatError(f"{name}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_EM_HEADER.size)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{name}: non-finite values")


def validate_pcem_file(path: str) -> None:
    with open(path, "rb") as fh:
        validate_pcem_bytes(fh.read(), name=path)


def read_pcds(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DS_HEADER.size:
        raise FormatError(f"{path}: truncated PCDS header")
    magic, version, n, cols, dtype = _DS_HEADER.unpack_from(raw)
    if magic != b"PCDS":
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _DS_HEADER.size
    if dtype == 1:
        rows = np.frombuffer(raw, dtype="<u4", offset=offset)
    elif dtype == 2:
        rows = np.frombuffer(raw, dtype=np.uint8, offset=offset)
    else:
        raise FormatError(f"{path}: unknown dtype code {dtype}")
    if rows.size != n * cols:
        raise FormatError(f"{path}: payload size mismatch")
    return rows.reshape(n, cols).astype(np.int64)


def read_text_rows(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(tok) for tok in line.split()])
    if not rows:
        raise FormatError(f"{path}: empty dataset")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise FormatError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.int64)


def load_rows(path: str) -> np.ndarray:
    if path.endswith(".txt"):
        return read_text_rows(path)
    return read_pcds(path)
