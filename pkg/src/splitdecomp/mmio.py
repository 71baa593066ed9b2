"""Matrix Market readers and writers.

Thin wrappers around scipy.io that pin the text precision to 17 significant
digits so float64 values round-trip exactly through the decimal files.
"""

from __future__ import annotations

import numpy as np
import scipy.io

from .linops import SymmetricOperator

# 17 significant digits, enough for an exact float64 round trip.
_PRECISION = 17


def write_matrix(path, mat: np.ndarray) -> None:
    scipy.io.mmwrite(str(path), np.asarray(mat, dtype=float), precision=_PRECISION)


def read_matrix(path) -> np.ndarray:
    m = scipy.io.mmread(str(path))
    if hasattr(m, "toarray"):
        m = m.toarray()
    return np.asarray(m, dtype=float)


def write_operator(path, op: SymmetricOperator) -> None:
    write_matrix(path, op.mat)


def read_operator(path) -> SymmetricOperator:
    return SymmetricOperator(read_matrix(path))


def write_vector(path, x: np.ndarray) -> None:
    write_matrix(path, np.asarray(x, dtype=float).reshape(-1, 1))


def read_vector(path) -> np.ndarray:
    m = read_matrix(path)
    if m.ndim == 2 and 1 in m.shape:
        return m.reshape(-1)
    if m.ndim == 1:
        return m
    raise ValueError(f"file {path} does not hold a vector, shape {m.shape}")
