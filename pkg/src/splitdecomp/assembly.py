"""Assembly of the block operator matrices of the component system.

For a family {R_i} and problem operator A this builds the mass operator
C = {R_i R_j^T}, the stiffness operator B = {R_i A R_j^T}, their block
diagonal parts C0 and B0, and the triangular split B = B1 + B2 with
B2 = B1^T used by the factorized schemes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from . import linops, mmio
from .decomposition import DecompositionFamily, BlockVector
from .linops import SymmetricOperator


@dataclass(frozen=True)
class BlockOperator:
    """A p x p grid of rectangular blocks, stored as one flattened matrix."""

    dims: tuple
    mat: np.ndarray
    symmetric: bool

    def __post_init__(self):
        total = sum(self.dims)
        if self.mat.shape != (total, total):
            raise ValueError(
                f"flattened matrix shape {self.mat.shape} != ({total}, {total})"
            )
        self.mat.setflags(write=False)

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple:
        out = [0]
        for d in self.dims:
            out.append(out[-1] + d)
        return tuple(out)

    def block(self, i: int, j: int) -> np.ndarray:
        off = self.offsets
        return self.mat[off[i] : off[i + 1], off[j] : off[j + 1]]

    def apply(self, v: BlockVector) -> BlockVector:
        if v.dims != self.dims:
            raise ValueError(f"block dims {v.dims} != operator dims {self.dims}")
        return BlockVector.from_flat(self.dims, self.mat @ v.flatten())

    def as_operator(self) -> SymmetricOperator:
        if not self.symmetric:
            raise ValueError("block operator is not symmetric")
        return SymmetricOperator(self.mat)


def _exact_symmetrize(m: np.ndarray) -> np.ndarray:
    # BLAS products are not guaranteed bitwise symmetric; enforce it.
    return 0.5 * (m + m.T)


def assemble_mass(f: DecompositionFamily) -> BlockOperator:
    """C with blocks R_i R_j^T; symmetric positive semidefinite."""
    stacked = np.vstack(f.restrictions)
    return BlockOperator(f.dims, _exact_symmetrize(stacked @ stacked.T), True)


def assemble_stiffness(f: DecompositionFamily, a: SymmetricOperator) -> BlockOperator:
    """B with blocks R_i A R_j^T; symmetric positive semidefinite."""
    if a.dim != f.n:
        raise ValueError(f"operator dimension {a.dim} != family dimension {f.n}")
    stacked = np.vstack(f.restrictions)
    return BlockOperator(f.dims, _exact_symmetrize(stacked @ a.mat @ stacked.T), True)


def diagonal_part(x: BlockOperator) -> BlockOperator:
    """Keep the diagonal blocks (i, i), zero everywhere else."""
    out = np.zeros_like(x.mat)
    off = x.offsets
    for i in range(x.p):
        out[off[i] : off[i + 1], off[i] : off[i + 1]] = x.block(i, i)
    return BlockOperator(x.dims, out, x.symmetric)


def triangular_split(b: BlockOperator):
    """Split B = B1 + B2 with B1 block lower triangular, B2 = B1^T.

    B1 carries the strictly lower blocks plus half of each diagonal block,
    so the reassembly B1 + B2 = B is exact entrywise.
    """
    if not b.symmetric:
        raise ValueError("triangular split requires a symmetric block operator")
    b1 = np.zeros_like(b.mat)
    off = b.offsets
    for i in range(b.p):
        b1[off[i] : off[i + 1], off[i] : off[i + 1]] = 0.5 * b.block(i, i)
        for j in range(i):
            b1[off[i] : off[i + 1], off[j] : off[j + 1]] = b.block(i, j)
    b2 = b1.T.copy()
    return (
        BlockOperator(b.dims, b1, False),
        BlockOperator(b.dims, b2, False),
    )


def check_dominance(x: BlockOperator, x0: BlockOperator, p: int) -> float:
    """Largest generalized eigenvalue of x v = lambda x0 v.

    For the assembled (C, C0) and (B, B0) of a validated family the result
    is at most p (up to rounding).
    """
    if not (x.symmetric and x0.symmetric):
        raise ValueError("dominance check requires symmetric operators")
    if linops.min_eigenvalue(x0.as_operator()) <= 0.0:
        raise ValueError("diagonal part is singular; dominance check undefined")
    vals = scipy.linalg.eigh(x.mat, x0.mat, eigvals_only=True)
    return float(vals[-1])


def assemble_block_rhs(f: DecompositionFamily, g: np.ndarray) -> BlockVector:
    """Component right-hand side {R_i g}."""
    return BlockVector([f.restrict(i, g) for i in range(f.p)])


def export_block_operator(x: BlockOperator, mm_path, sidecar_path) -> None:
    """Flattened Matrix Market dump plus a JSON sidecar with block boundaries."""
    mmio.write_matrix(mm_path, x.mat)
    doc = {
        "dims": list(x.dims),
        "offsets": list(x.offsets),
        "symmetric": x.symmetric,
        "matrix_file": Path(mm_path).name,
    }
    Path(sidecar_path).write_text(json.dumps(doc, indent=2) + "\n")


def import_block_operator(sidecar_path) -> BlockOperator:
    sidecar_path = Path(sidecar_path)
    doc = json.loads(sidecar_path.read_text())
    mat = mmio.read_matrix(sidecar_path.parent / doc["matrix_file"])
    return BlockOperator(tuple(doc["dims"]), mat, bool(doc["symmetric"]))


def assemble_all(f: DecompositionFamily, a: SymmetricOperator) -> dict:
    """Everything the steppers need, assembled once."""
    c = assemble_mass(f)
    b = assemble_stiffness(f, a)
    b1, b2 = triangular_split(b)
    return {
        "C": c,
        "B": b,
        "C0": diagonal_part(c),
        "B0": diagonal_part(b),
        "B1": b1,
        "B2": b2,
    }
