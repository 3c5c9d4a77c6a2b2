"""Binary matrix cache format and atomic file writes.

Matrix files carry the magic ``CABC``, a u16 format version, u32 row and
column counts, then the entries row-major as little-endian float64
(re, im) pairs.  Used to cache dense DtN references and materialized
probed blocks between pipeline stages.
"""

import os
import struct
import tempfile

import numpy as np

__all__ = ["MatrixFormatError", "write_matrix", "read_matrix", "atomic_write_text"]

_MAGIC = b"CABC"
_VERSION = 1


class MatrixFormatError(Exception):
    """Raised on bad magic, version, or truncated payload."""


def write_matrix(path, matrix) -> None:
    """Write a complex matrix to ``path`` atomically (write-temp-rename)."""
    m = np.ascontiguousarray(np.atleast_2d(np.asarray(matrix, dtype=np.complex128)))
    rows, cols = m.shape
    header = _MAGIC + struct.pack("<HII", _VERSION, rows, cols)
    payload = np.empty((rows, cols, 2), dtype="<f8")
    payload[..., 0] = m.real
    payload[..., 1] = m.imag
    _atomic_write_bytes(path, header + payload.tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix`; bit-exact roundtrip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {blob[:4]!r}")
    (version, rows, cols) = struct.unpack("<HII", blob[4:14])
    if version != _VERSION:
        raise MatrixFormatError(f"{path}: unsupported version {version}")
    expected = 14 + 16 * rows * cols
    if len(blob) != expected:
        raise MatrixFormatError(f"{path}: expected {expected} bytes, got {len(blob)}")
    raw = np.frombuffer(blob, dtype="<f8", offset=14).reshape(rows, cols, 2)
    return raw[..., 0] + 1j * raw[..., 1]


def _atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".cabc-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))
