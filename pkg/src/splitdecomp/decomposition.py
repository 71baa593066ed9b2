"""Families of restriction/prolongation operators for solution decomposition.

A family holds p restriction maps R_i from the global space onto component
spaces V_i; the prolongation is always the transpose R_i^T.  Every global
vector u must admit the expansion u = sum_i R_i^T v_i.  Direct-sum families
satisfy R_i R_j^T = delta_ij I exactly; overlapping families use plain row
selection with extension by zero, so R_i R_i^T = I while off-diagonal
products pick up the shared indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linops, mmio
from .linops import SymmetricOperator

# Positive-definiteness threshold for completeness / Gram checks.
_PD_TOL = 1e-9

# Exactness threshold for the direct-sum orthogonality flag.
_DIRECT_SUM_TOL = 1e-12


class InvalidPartitionError(ValueError):
    """Index sets of a direct-sum partition overlap or miss indices."""


class InvalidCoverError(ValueError):
    """Subdomain index sets do not cover every global index."""


class InvalidWeightsError(ValueError):
    """Supplied weights are not a partition of unity on the subdomains."""


class IncompleteFamilyError(ValueError):
    """The stacked prolongations do not span the global space."""


@dataclass(frozen=True)
class DecompositionFamily:
    """p restriction maps R_i (dim V_i x n) with transposed prolongations."""

    n: int
    restrictions: tuple
    kind: str  # "direct_sum" | "overlapping" | "custom"
    pou_weights: tuple | None = None  # per-component weights over global indices

    def __post_init__(self):
        for r in self.restrictions:
            if r.ndim != 2 or r.shape[1] != self.n:
                raise ValueError(
                    f"restriction has shape {r.shape}, expected (*, {self.n})"
                )
            r.setflags(write=False)
        if self.pou_weights is not None:
            for d in self.pou_weights:
                if d.shape != (self.n,):
                    raise ValueError("weight vector dimension mismatch")
                d.setflags(write=False)

    @property
    def p(self) -> int:
        return len(self.restrictions)

    @property
    def dims(self) -> tuple:
        return tuple(r.shape[0] for r in self.restrictions)

    def restrict(self, i: int, u: np.ndarray) -> np.ndarray:
        return self.restrictions[i] @ u

    def prolong(self, i: int, v: np.ndarray) -> np.ndarray:
        return self.restrictions[i].T @ v


@dataclass
class BlockVector:
    """One component vector per space V_i."""

    parts: list

    @property
    def p(self) -> int:
        return len(self.parts)

    @property
    def dims(self) -> tuple:
        return tuple(len(v) for v in self.parts)

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.parts) if self.parts else np.zeros(0)

    @classmethod
    def from_flat(cls, dims, flat: np.ndarray) -> "BlockVector":
        flat = np.asarray(flat, dtype=float)
        if len(flat) != sum(dims):
            raise ValueError(f"flat vector length {len(flat)} != sum of dims {sum(dims)}")
        parts = []
        off = 0
        for d in dims:
            parts.append(flat[off : off + d].copy())
            off += d
        return cls(parts)

    def copy(self) -> "BlockVector":
        return BlockVector([v.copy() for v in self.parts])


@dataclass
class ValidationReport:
    """Flags and numerical witnesses for the family invariants."""

    complete: bool
    each_gram_pd: bool
    direct_sum: bool
    min_eig_stack: float  # min eigenvalue of sum_i R_i^T R_i
    min_eig_gram: float  # min over i of min eigenvalue of R_i R_i^T
    max_direct_sum_deviation: float  # max |R_i R_j^T - delta_ij I|

    @property
    def ok(self) -> bool:
        return self.complete and self.each_gram_pd


def _selection_matrix(n: int, indices) -> np.ndarray:
    r = np.zeros((len(indices), n))
    for local, k in enumerate(indices):
        r[local, k] = 1.0
    return r


def direct_sum_family(n: int, partition) -> DecompositionFamily:
    """Family of identity-row selections over a disjoint partition of 0..n-1."""
    sets = [sorted(int(k) for k in s) for s in partition]
    seen = set()
    for s in sets:
        if not s:
            raise InvalidPartitionError("empty index set in partition")
        for k in s:
            if k < 0 or k >= n:
                raise InvalidPartitionError(f"index {k} out of range for n={n}")
            if k in seen:
                raise InvalidPartitionError(f"index {k} appears in two sets")
            seen.add(k)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise InvalidPartitionError(f"partition misses indices {missing[:8]}")
    restrictions = tuple(_selection_matrix(n, s) for s in sets)
    weights = tuple(np.asarray([1.0 if k in set(s) else 0.0 for k in range(n)]) for s in sets)
    return DecompositionFamily(n, restrictions, "direct_sum", weights)


def overlapping_family(n: int, subdomains, weights=None) -> DecompositionFamily:
    """Row-selection family over (possibly overlapping) subdomains.

    Prolongation is extension by zero.  Default weights give each global
    index mass 1/multiplicity on every subdomain that contains it; they pick
    the particular initial decomposition, nothing else.
    """
    sets = [sorted(int(k) for k in s) for s in subdomains]
    covered = set()
    for s in sets:
        if not s:
            raise InvalidCoverError("empty subdomain")
        for k in s:
            if k < 0 or k >= n:
                raise InvalidCoverError(f"index {k} out of range for n={n}")
        covered.update(s)
    if len(covered) != n:
        missing = sorted(set(range(n)) - covered)
        raise InvalidCoverError(f"subdomains miss indices {missing[:8]}")

    restrictions = tuple(_selection_matrix(n, s) for s in sets)

    if weights is None:
        multiplicity = np.zeros(n)
        for s in sets:
            for k in s:
                multiplicity[k] += 1.0
        pou = []
        for s in sets:
            d = np.zeros(n)
            for k in s:
                d[k] = 1.0 / multiplicity[k]
            pou.append(d)
        pou = tuple(pou)
    else:
        pou = tuple(np.asarray(d, dtype=float) for d in weights)
        if len(pou) != len(sets):
            raise InvalidWeightsError("one weight vector per subdomain required")
        total = np.zeros(n)
        for s, d in zip(sets, pou):
            if d.shape != (n,):
                raise InvalidWeightsError("weight vector dimension mismatch")
            if np.any(d < 0):
                raise InvalidWeightsError("weights must be nonnegative")
            outside = d.copy()
            outside[list(s)] = 0.0
            if np.any(outside != 0):
                raise InvalidWeightsError("weight supported outside its subdomain")
            total += d
        if not np.allclose(total, 1.0, rtol=0.0, atol=1e-12):
            raise InvalidWeightsError("weights do not sum to 1 at every index")
    return DecompositionFamily(n, restrictions, "overlapping", pou)


def custom_family(restrictions) -> DecompositionFamily:
    """Arbitrary restriction matrices; all checks deferred to validate_family."""
    mats = [np.array(r, dtype=float) for r in restrictions]
    if not mats:
        raise ValueError("at least one restriction required")
    n = mats[0].shape[1]
    for r in mats:
        if r.ndim != 2 or r.shape[1] != n:
            raise ValueError("restrictions must share the global dimension")
    return DecompositionFamily(n, tuple(mats), "custom", None)


def validate_family(f: DecompositionFamily) -> ValidationReport:
    """Check completeness, Gram positivity and direct-sum orthogonality."""
    stack_gram = sum(r.T @ r for r in f.restrictions)
    min_eig_stack = linops.min_eigenvalue(SymmetricOperator(stack_gram))
    min_eig_gram = min(
        linops.min_eigenvalue(SymmetricOperator(r @ r.T)) for r in f.restrictions
    )
    deviation = 0.0
    for i, ri in enumerate(f.restrictions):
        for j, rj in enumerate(f.restrictions):
            g = ri @ rj.T
            if i == j:
                g = g - np.eye(ri.shape[0])
            deviation = max(deviation, float(np.abs(g).max(initial=0.0)))
    return ValidationReport(
        complete=min_eig_stack > _PD_TOL,
        each_gram_pd=min_eig_gram > _PD_TOL,
        direct_sum=deviation <= _DIRECT_SUM_TOL,
        min_eig_stack=min_eig_stack,
        min_eig_gram=min_eig_gram,
        max_direct_sum_deviation=deviation,
    )


def decompose(f: DecompositionFamily, u: np.ndarray) -> BlockVector:
    """Split u into components v_i with reconstruct(f, v) == u.

    Direct-sum families use the unique choice v_i = R_i u.  Families with
    partition-of-unity weights take v_i = R_i (d_i * u).  Custom families
    without weights fall back to the minimum-norm solution of the mass
    system C v = {R_i u}.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (f.n,):
        raise ValueError(f"vector dimension {u.shape} != family dimension {f.n}")
    report = validate_family(f)
    if not report.complete:
        raise IncompleteFamilyError(
            f"family is not complete (min stacked-Gram eigenvalue {report.min_eig_stack:g})"
        )
    if f.kind == "direct_sum":
        return BlockVector([f.restrict(i, u) for i in range(f.p)])
    if f.pou_weights is not None:
        return BlockVector([f.restrict(i, f.pou_weights[i] * u) for i in range(f.p)])
    # Minimum-norm particular solution through the assembled mass operator.
    stacked = np.vstack(f.restrictions)
    mass = SymmetricOperator(stacked @ stacked.T)
    rhs = stacked @ u
    flat = linops.solve_spsd(mass, rhs)
    return BlockVector.from_flat(f.dims, flat)


def reconstruct(f: DecompositionFamily, v: BlockVector) -> np.ndarray:
    """Return sum_i R_i^T v_i."""
    if v.dims != f.dims:
        raise ValueError(f"component dims {v.dims} != family dims {f.dims}")
    out = np.zeros(f.n)
    for i, vi in enumerate(v.parts):
        out += f.prolong(i, vi)
    return out


def save_manifest(f: DecompositionFamily, path) -> None:
    """Write a JSON manifest; custom restrictions go to Matrix Market files."""
    path = Path(path)
    doc = {"n": f.n, "p": f.p, "kind": f.kind}
    if f.kind in ("direct_sum", "overlapping"):
        doc["index_sets"] = [
            [int(k) for k in np.flatnonzero(r.sum(axis=0))] for r in f.restrictions
        ]
        if f.pou_weights is not None:
            doc["weights"] = [list(map(float, d)) for d in f.pou_weights]
    else:
        files = []
        for i, r in enumerate(f.restrictions):
            name = f"{path.stem}_restriction_{i}.mtx"
            mmio.write_matrix(path.parent / name, r)
            files.append(name)
        doc["restriction_files"] = files
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path) -> DecompositionFamily:
    path = Path(path)
    doc = json.loads(path.read_text())
    kind = doc["kind"]
    n = int(doc["n"])
    if kind == "direct_sum":
        return direct_sum_family(n, doc["index_sets"])
    if kind == "overlapping":
        weights = doc.get("weights")
        return overlapping_family(n, doc["index_sets"], weights=weights)
    if kind == "custom":
        mats = [mmio.read_matrix(path.parent / name) for name in doc["restriction_files"]]
        return custom_family(mats)
    raise ValueError(f"unknown family kind {kind!r}")


def standard_families(n: int) -> dict:
    """The shipped example families: p in {1, 2, 3, 4}, direct-sum and overlapping."""
    if n < 8:
        raise ValueError("standard families need n >= 8")
    half = n // 2
    quarter = n // 4
    third = n // 3
    ov = max(1, n // 8)
    return {
        "trivial_p1": direct_sum_family(n, [range(n)]),
        "directsum_p2": direct_sum_family(n, [range(half), range(half, n)]),
        "directsum_p4": direct_sum_family(
            n,
            [
                range(quarter),
                range(quarter, 2 * quarter),
                range(2 * quarter, 3 * quarter),
                range(3 * quarter, n),
            ],
        ),
        "overlap_p2": overlapping_family(
            n, [range(half + ov), range(half - ov, n)]
        ),
        "overlap_p3": overlapping_family(
            n,
            [
                range(third + ov),
                range(third - ov, 2 * third + ov),
                range(2 * third - ov, n),
            ],
        ),
    }
