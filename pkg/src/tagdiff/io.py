"""Readers and writers for the on-disk dataset formats.

* edges: text, one ``u v`` pair of 0-based ids per line meaning ``u -> v``
* labels: text, one class id (or -1 for unlabeled) per line
* splits: text, one node index per line
* features: binary ``STGF`` + u32 rows + u32 cols + row-major float32, all
  little-endian
"""
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError

FEATURE_MAGIC = b"STGF"
_HEADER = struct.Struct("<4sII")


def write_features(path, x):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("features must be 2-d")
    rows, cols = x.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, rows, cols))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_features(path):
    """Load an STGF file as float64."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise LoadError(path, "truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise LoadError(path, f"bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise LoadError(path, f"expected {expected} bytes for a {rows}x{cols} matrix, got {len(data)}")
    x = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    x = x.astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise LoadError(path, "non-finite feature value")
    return x


def _int_lines(path, per_line):
    """Parse ``per_line`` integers from each non-blank line; returns (values, line_numbers)."""
    values, line_nos = [], []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != per_line:
                raise LoadError(path, f"expected {per_line} integer(s), got {line.strip()!r}", no)
            try:
                values.append([int(p) for p in parts])
            except ValueError:
                raise LoadError(path, f"not an integer: {line.strip()!r}", no) from None
            line_nos.append(no)
    arr = np.array(values, dtype=np.int64).reshape(-1, per_line)
    return arr, np.array(line_nos, dtype=np.int64)


def read_edges(path, n_nodes):
    """Return ``(src, dst)`` arrays, rejecting ids outside ``[0, n_nodes)``."""
    pairs, line_nos = _int_lines(path, 2)
    bad = np.flatnonzero((pairs < 0).any(axis=1) | (pairs >= n_nodes).any(axis=1))
    if bad.size:
        u, v = pairs[bad[0]]
        raise LoadError(path, f"edge {u} {v} references a node outside [0, {n_nodes})",
                        int(line_nos[bad[0]]))
    return pairs[:, 0], pairs[:, 1]


def read_labels(path):
    labels, line_nos = _int_lines(path, 1)
    labels = labels[:, 0]
    bad = np.flatnonzero(labels < -1)
    if bad.size:
        raise LoadError(path, f"invalid class id {labels[bad[0]]}", int(line_nos[bad[0]]))
    return labels


def read_index_file(path, n_nodes):
    idx, line_nos = _int_lines(path, 1)
    idx = idx[:, 0]
    bad = np.flatnonzero((idx < 0) | (idx >= n_nodes))
    if bad.size:
        raise LoadError(path, f"index {idx[bad[0]]} outside [0, {n_nodes})", int(line_nos[bad[0]]))
    uniq, first = np.unique(idx, return_index=True)
    if uniq.size != idx.size:
        dup = np.setdiff1d(np.arange(idx.size), first)[0]
        raise LoadError(path, f"index {idx[dup]} listed twice", int(line_nos[dup]))
    return idx


def write_edges(path, src, dst):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{u} {v}\n" for u, v in zip(src, dst))


def write_ints(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(v)}\n" for v in values)
