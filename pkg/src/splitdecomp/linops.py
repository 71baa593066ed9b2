"""Dense symmetric linear algebra kernels.

Everything downstream (family validation, block assembly, time steppers,
stability certificates) goes through the handful of primitives in this
module: operator application, inner products, energy norms, a conjugate
gradient solve that tolerates consistent singular SPSD systems, and dense
eigenvalue oracles for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

# Dense eigenvalue oracles refuse to run above this dimension.
ORACLE_CAP = 2000

# Default relative tolerance of the Krylov solver.
DEFAULT_SOLVER_TOL = 1e-12

# Absolute slack when deciding positive semidefiniteness of unit-scaled
# operators.
PSD_TOL = 1e-9


class SolverFailure(RuntimeError):
    """Krylov iteration stopped without reaching the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NotPositiveSemidefinite(ValueError):
    """An operator required to be PSD produced a negative quadratic form."""


class OracleScaleError(ValueError):
    """A dense eigenvalue oracle was invoked above its size cap."""


@dataclass(frozen=True)
class SymmetricOperator:
    """A dense self-adjoint operator on R^dim.

    Entries are stored exactly symmetric: the constructor rejects matrices
    that are not symmetric within rounding and then symmetrizes them so that
    ``mat[i, j] == mat[j, i]`` holds bitwise.
    """

    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        scale = float(np.abs(m).max(initial=0.0))
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-10 * max(1.0, scale)):
            raise ValueError("operator entries are not symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def __add__(self, other: "SymmetricOperator") -> "SymmetricOperator":
        return SymmetricOperator(self.mat + other.mat)

    def __sub__(self, other: "SymmetricOperator") -> "SymmetricOperator":
        return SymmetricOperator(self.mat - other.mat)

    def __rmul__(self, a: float) -> "SymmetricOperator":
        return SymmetricOperator(a * self.mat)


def identity(n: int) -> SymmetricOperator:
    return SymmetricOperator(np.eye(n))


def _as_matrix(op) -> np.ndarray:
    if isinstance(op, SymmetricOperator):
        return op.mat
    return np.asarray(op, dtype=float)


def apply(op: SymmetricOperator, x: np.ndarray) -> np.ndarray:
    """Return op @ x, checking dimensions."""
    m = _as_matrix(op)
    x = np.asarray(x, dtype=float)
    if x.shape != (m.shape[1],):
        raise ValueError(f"dimension mismatch: operator {m.shape}, vector {x.shape}")
    return m @ x


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Euclidean scalar product (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x, y))


def energy_norm(op: SymmetricOperator, x: np.ndarray) -> float:
    """Energy norm ||x||_op = sqrt((op x, x)) for a symmetric PSD operator.

    Raises NotPositiveSemidefinite when the quadratic form is negative beyond
    rounding slack; clamps tiny negative values (kernel vectors) to zero.
    """
    m = _as_matrix(op)
    q = inner(apply(op, x), x)
    if not np.isfinite(q):
        # Blown-up trajectory; report an infinite norm so monitors can flag it.
        return float("inf")
    scale = float(np.abs(m).max(initial=0.0)) * float(np.dot(x, x))
    if q < -PSD_TOL * max(scale, 1.0):
        raise NotPositiveSemidefinite(
            f"quadratic form is negative ({q:g}) for a supposedly PSD operator"
        )
    return float(np.sqrt(max(q, 0.0)))


def solve_spsd(
    op: SymmetricOperator,
    rhs: np.ndarray,
    tol: float = DEFAULT_SOLVER_TOL,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve op @ x = rhs for a symmetric positive semidefinite operator.

    Conjugate gradients from a zero initial guess.  On a consistent singular
    system this converges to the minimum-norm solution; inconsistency or an
    indefinite operator surfaces as SolverFailure / NotPositiveSemidefinite.
    """
    a = _as_matrix(op)
    b = np.asarray(rhs, dtype=float)
    if b.shape != (a.shape[0],):
        raise ValueError(f"dimension mismatch: operator {a.shape}, rhs {b.shape}")
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros_like(b)
    if max_iter is None:
        max_iter = 10 * a.shape[0] + 100

    a_scale = float(np.abs(a).max(initial=0.0))
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.dot(r, r))
    for _ in range(max_iter):
        if np.sqrt(rs) <= tol * nb:
            return x
        ap = a @ p
        pap = float(np.dot(p, ap))
        p_scale = float(np.dot(p, p))
        if pap < -PSD_TOL * max(a_scale * p_scale, 1.0):
            raise NotPositiveSemidefinite("indefiniteness detected in CG iteration")
        if pap <= 1e-28 * max(a_scale * p_scale, 1.0):
            # Search direction fell into the kernel; a consistent system must
            # already be converged at this point.
            break
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.dot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= tol * nb:
        return x
    raise SolverFailure(
        f"CG did not converge: residual {np.sqrt(rs):.3e} > {tol:g} * {nb:.3e}",
        residual=float(np.sqrt(rs)),
    )


def min_eigenvalue(op: SymmetricOperator, cap: int = ORACLE_CAP) -> float:
    """Smallest eigenvalue of a symmetric operator (dense oracle)."""
    a = _as_matrix(op)
    if a.shape[0] > cap:
        raise OracleScaleError(f"dimension {a.shape[0]} exceeds oracle cap {cap}")
    return float(scipy.linalg.eigvalsh(a)[0])


def max_eigenvalue(op: SymmetricOperator, cap: int = ORACLE_CAP) -> float:
    """Largest eigenvalue of a symmetric operator (dense oracle)."""
    a = _as_matrix(op)
    if a.shape[0] > cap:
        raise OracleScaleError(f"dimension {a.shape[0]} exceeds oracle cap {cap}")
    return float(scipy.linalg.eigvalsh(a)[-1])


def spectral_radius(mat: np.ndarray, cap: int = ORACLE_CAP) -> float:
    """Spectral radius of a general square matrix (dense oracle)."""
    m = np.asarray(mat, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if m.shape[0] > cap:
        raise OracleScaleError(f"dimension {m.shape[0]} exceeds oracle cap {cap}")
    return float(np.max(np.abs(np.linalg.eigvals(m))))
