"""Time steppers for the component system, with energy monitors.

Schemes:
  implicit_scalar        - monolithic backward Euler on the original problem.
  implicit_vector        - backward Euler on the block system C dv/dt + B v = f.
  three_level_split      - three-level scheme treating only the block
                           diagonals C0, B0 implicitly; stable for
                           mu >= p/2, sigma >= p/4.
  three_level_directsum  - second-order three-level scheme for direct-sum
                           families (C = I); stable for sigma >= p/4.
  two_level_directsum    - first-order two-level scheme for direct-sum
                           families; stable for sigma >= p/2.
  factorized             - two triangular sweeps with (I + tau sigma B1)
                           (I + tau sigma B2); stable for sigma >= 1/2.

The per-step systems of the splitting schemes are block diagonal (or block
triangular), so each component is solved independently from a cached
Cholesky factorization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import assembly, linops
from .assembly import BlockOperator
from .decomposition import BlockVector, DecompositionFamily, decompose, reconstruct, validate_family
from .linops import ORACLE_CAP, OracleScaleError, SymmetricOperator
from .problems import EvolutionProblem

SCHEMES = (
    "implicit_scalar",
    "implicit_vector",
    "three_level_split",
    "three_level_directsum",
    "two_level_directsum",
    "factorized",
)
THREE_LEVEL_SCHEMES = ("three_level_split", "three_level_directsum")
DIRECT_SUM_SCHEMES = ("three_level_directsum", "two_level_directsum", "factorized")

# Relative slack separating rounding noise from genuine bound violations.
BOUND_SLACK = 1e-9


class SchemePreconditionError(ValueError):
    """The configured scheme cannot run on the supplied family."""


@dataclass
class SchemeConfig:
    scheme: str
    tau: float
    steps: int
    mu: Optional[float] = None
    sigma: Optional[float] = None
    solver_tol: float = 1e-12
    solver_max_iter: Optional[int] = None
    first_step: str = "implicit"  # "implicit" | "exact"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.first_step not in ("implicit", "exact"):
            raise ValueError(f"unknown first_step mode {self.first_step!r}")
        needs_sigma = self.scheme in (
            "three_level_split",
            "three_level_directsum",
            "two_level_directsum",
            "factorized",
        )
        if needs_sigma and self.sigma is None:
            raise ValueError(f"scheme {self.scheme} requires sigma")
        if self.scheme == "three_level_split" and self.mu is None:
            raise ValueError("three_level_split requires mu")


def threshold_flags(config: SchemeConfig, p: int) -> list:
    """Sufficient-stability-threshold violations; warnings, never errors."""
    out = []
    tol = 1e-12
    if config.scheme == "three_level_split":
        if config.mu < p / 2 - tol:
            out.append(f"mu={config.mu:g} < p/2={p / 2:g}: outside guaranteed regime")
        if config.sigma < p / 4 - tol:
            out.append(f"sigma={config.sigma:g} < p/4={p / 4:g}: outside guaranteed regime")
    elif config.scheme == "three_level_directsum":
        if config.sigma < p / 4 - tol:
            out.append(f"sigma={config.sigma:g} < p/4={p / 4:g}: outside guaranteed regime")
    elif config.scheme == "two_level_directsum":
        if config.sigma < p / 2 - tol:
            out.append(f"sigma={config.sigma:g} < p/2={p / 2:g}: outside guaranteed regime")
    elif config.scheme == "factorized":
        if config.sigma < 0.5 - tol:
            out.append(f"sigma={config.sigma:g} < 1/2: outside guaranteed regime")
    return out


@dataclass
class MonitorRecord:
    step: int
    time: float
    a_energy: float  # ||y^n||_A^2
    forcing_sum: float  # (1/2) sum of tau ||f^k||^2 entering the bound
    bound: float
    bound_ok: bool
    half_energy: Optional[float] = None  # ||(y^n + y^{n-1})/2||_A^2
    three_level_energy: Optional[float] = None  # E^n
    decay_ok: Optional[bool] = None  # E^n <= E^{n-1} + (tau/2) ||f^{n-1}||^2


@dataclass
class Trajectory:
    config: SchemeConfig
    times: list
    ys: list  # reconstructed solutions y^n
    half_steps: list  # (y^{n+1} + y^n)/2, three-level schemes only
    states: list  # flattened block states w^n
    records: list = field(default_factory=list)
    regime_warnings: list = field(default_factory=list)
    family: Optional[DecompositionFamily] = None
    context: Optional[dict] = None  # operators and forcing samples for monitors


# ---------------------------------------------------------------------------
# Right-hand sides of the per-step systems (flattened arrays).


def _rhs_three_level_split(cm, c0m, bm, b0m, f, w, wm1, tau, mu, sigma):
    dw = (w - wm1) / tau
    return (
        f
        + (mu / tau) * (c0m @ w)
        - (1.0 - mu) * (c0m @ dw)
        - (cm - c0m) @ dw
        - b0m @ ((1.0 - 2.0 * sigma) * w + sigma * wm1)
        - (bm - b0m) @ w
    )


def _rhs_three_level_directsum(bm, b0m, f, w, wm1, tau, sigma):
    return (
        f
        + wm1 / (2.0 * tau)
        - b0m @ ((1.0 - 2.0 * sigma) * w + sigma * wm1)
        - (bm - b0m) @ w
    )


def _rhs_two_level_directsum(bm, b0m, f, w, tau, sigma):
    return f + w / tau - (1.0 - sigma) * (b0m @ w) - (bm - b0m) @ w


class _BlockCholesky:
    """Cached Cholesky factors of the diagonal blocks of a block-diagonal lhs."""

    def __init__(self, dims, blocks):
        self.dims = tuple(dims)
        self.offsets = [0]
        for d in self.dims:
            self.offsets.append(self.offsets[-1] + d)
        self.factors = [scipy.linalg.cho_factor(b) for b in blocks]

    def solve(self, rhs):
        # check_finite off: a blowing-up explicit regime must reach the
        # energy monitor instead of crashing inside LAPACK input checks.
        out = np.empty_like(rhs)
        for i, fac in enumerate(self.factors):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            out[lo:hi] = scipy.linalg.cho_solve(fac, rhs[lo:hi], check_finite=False)
        return out


def _diag_blocks(mat, dims):
    out = []
    off = 0
    for d in dims:
        out.append(mat[off : off + d, off : off + d])
        off += d
    return out


def _forward_sweep(bm, dims, factors, offsets, tau_sigma, rhs):
    """Solve (I + tau sigma B1) z = rhs by block forward substitution."""
    z = np.empty_like(rhs)
    for i in range(len(dims)):
        lo, hi = offsets[i], offsets[i + 1]
        r = rhs[lo:hi].copy()
        for j in range(i):
            jlo, jhi = offsets[j], offsets[j + 1]
            r -= tau_sigma * (bm[lo:hi, jlo:jhi] @ z[jlo:jhi])
        z[lo:hi] = scipy.linalg.cho_solve(factors[i], r, check_finite=False)
    return z


def _backward_sweep(bm, dims, factors, offsets, tau_sigma, rhs):
    """Solve (I + tau sigma B2) z = rhs by block backward substitution."""
    z = np.empty_like(rhs)
    for i in reversed(range(len(dims))):
        lo, hi = offsets[i], offsets[i + 1]
        r = rhs[lo:hi].copy()
        for j in range(i + 1, len(dims)):
            jlo, jhi = offsets[j], offsets[j + 1]
            r -= tau_sigma * (bm[lo:hi, jlo:jhi] @ z[jlo:jhi])
        z[lo:hi] = scipy.linalg.cho_solve(factors[i], r, check_finite=False)
    return z


# ---------------------------------------------------------------------------
# Public one-shot steppers.


def step_implicit_scalar(a: SymmetricOperator, f_n, y_n, tau: float) -> np.ndarray:
    """One backward Euler step: (I + tau A) y^{n+1} = y^n + tau f^n."""
    lhs = np.eye(a.dim) + tau * a.mat
    return scipy.linalg.solve(lhs, np.asarray(y_n) + tau * np.asarray(f_n), assume_a="pos")


def step_implicit_vector(
    c: BlockOperator,
    b: BlockOperator,
    f_n: BlockVector,
    w_n: BlockVector,
    tau: float,
    tol: float = 1e-12,
    max_iter: Optional[int] = None,
) -> BlockVector:
    """One implicit step of the block system: (C + tau B) w = C w^n + tau f^n.

    The system may be singular (overlapping families); it is consistent by
    construction and solved by conjugate gradients from zero.
    """
    m = SymmetricOperator(c.mat + tau * b.mat)
    rhs = c.mat @ w_n.flatten() + tau * f_n.flatten()
    flat = linops.solve_spsd(m, rhs, tol=tol, max_iter=max_iter)
    res = float(np.linalg.norm(m.mat @ flat - rhs))
    scale = float(np.linalg.norm(rhs))
    if res > 100.0 * max(tol * scale, 1e-300):
        raise linops.SolverFailure(
            f"implicit vector step residual {res:.3e} inconsistent with tolerance", res
        )
    return BlockVector.from_flat(c.dims, flat)


def first_step(
    c: BlockOperator,
    b: BlockOperator,
    f_0: BlockVector,
    v0: BlockVector,
    tau: float,
    tol: float = 1e-12,
    max_iter: Optional[int] = None,
) -> BlockVector:
    """Second initial condition of the three-level schemes: one implicit step."""
    return step_implicit_vector(c, b, f_0, v0, tau, tol=tol, max_iter=max_iter)


def step_three_level_split(
    c: BlockOperator,
    c0: BlockOperator,
    b: BlockOperator,
    b0: BlockOperator,
    f_n: BlockVector,
    w_n: BlockVector,
    w_nm1: BlockVector,
    tau: float,
    mu: float,
    sigma: float,
) -> BlockVector:
    """Three-level explicit-implicit step; the lhs (mu/tau) C0 + sigma B0 is
    block diagonal so the p component systems are independent."""
    rhs = _rhs_three_level_split(
        c.mat, c0.mat, b.mat, b0.mat,
        f_n.flatten(), w_n.flatten(), w_nm1.flatten(), tau, mu, sigma,
    )
    lhs_blocks = [
        (mu / tau) * c0.block(i, i) + sigma * b0.block(i, i) for i in range(c.p)
    ]
    solver = _BlockCholesky(c.dims, lhs_blocks)
    return BlockVector.from_flat(c.dims, solver.solve(rhs))


def step_three_level_directsum(
    b: BlockOperator,
    b0: BlockOperator,
    f_n: BlockVector,
    w_n: BlockVector,
    w_nm1: BlockVector,
    tau: float,
    sigma: float,
) -> BlockVector:
    rhs = _rhs_three_level_directsum(
        b.mat, b0.mat, f_n.flatten(), w_n.flatten(), w_nm1.flatten(), tau, sigma
    )
    lhs_blocks = [
        np.eye(d) / (2.0 * tau) + sigma * b0.block(i, i) for i, d in enumerate(b.dims)
    ]
    solver = _BlockCholesky(b.dims, lhs_blocks)
    return BlockVector.from_flat(b.dims, solver.solve(rhs))


def step_two_level_directsum(
    b: BlockOperator,
    b0: BlockOperator,
    f_n: BlockVector,
    w_n: BlockVector,
    tau: float,
    sigma: float,
) -> BlockVector:
    rhs = _rhs_two_level_directsum(b.mat, b0.mat, f_n.flatten(), w_n.flatten(), tau, sigma)
    lhs_blocks = [
        np.eye(d) / tau + sigma * b0.block(i, i) for i, d in enumerate(b.dims)
    ]
    solver = _BlockCholesky(b.dims, lhs_blocks)
    return BlockVector.from_flat(b.dims, solver.solve(rhs))


def step_factorized(
    b: BlockOperator,
    b1: BlockOperator,
    b2: BlockOperator,
    f_n: BlockVector,
    w_n: BlockVector,
    tau: float,
    sigma: float,
) -> BlockVector:
    """Factorized step (I + tau sigma B1)(I + tau sigma B2) dw/tau = f^n - B w^n."""
    dims = b.dims
    offsets = [0]
    for d in dims:
        offsets.append(offsets[-1] + d)
    factors = [
        scipy.linalg.cho_factor(np.eye(d) + tau * sigma * b1.block(i, i))
        for i, d in enumerate(dims)
    ]
    w = w_n.flatten()
    rhs = f_n.flatten() - b.mat @ w
    z = _forward_sweep(b.mat, dims, factors, offsets, tau * sigma, rhs)
    d = _backward_sweep(b.mat, dims, factors, offsets, tau * sigma, z)
    return BlockVector.from_flat(dims, w + tau * d)


# ---------------------------------------------------------------------------
# Certificates.


def d_matrix(scheme: str, c, c0, b, b0, tau: float, mu, sigma) -> SymmetricOperator:
    """The stability-certificate operator of the three-level schemes."""
    if scheme == "three_level_split":
        m = tau * (mu * c0.mat - 0.5 * c.mat) + tau**2 * (sigma * b0.mat - 0.25 * b.mat)
    elif scheme == "three_level_directsum":
        m = tau**2 * (sigma * b0.mat - 0.25 * b.mat)
    else:
        raise ValueError(f"no D certificate for scheme {scheme!r}")
    return SymmetricOperator(m)


def check_D_operator(c, c0, b, b0, tau: float, mu: float, sigma: float) -> float:
    """Minimum eigenvalue of D = tau (mu C0 - C/2) + tau^2 (sigma B0 - B/4)."""
    d = d_matrix("three_level_split", c, c0, b, b0, tau, mu, sigma)
    return linops.min_eigenvalue(d)


def two_level_certificate(b, b0, sigma: float) -> float:
    """Minimum eigenvalue of sigma B0 - B/2 (two-level scheme certificate)."""
    return linops.min_eigenvalue(SymmetricOperator(sigma * b0.mat - 0.5 * b.mat))


def factorized_certificate(b, b1, b2, tau: float, sigma: float) -> float:
    """Minimum eigenvalue of G = (sigma - 1/2) B + sigma^2 tau B1 B2."""
    g = (sigma - 0.5) * b.mat + sigma**2 * tau * (b1.mat @ b2.mat)
    return linops.min_eigenvalue(SymmetricOperator(g))


# ---------------------------------------------------------------------------
# Run engine.


class _Engine:
    """Assembles the operators once and caches per-block factorizations."""

    def __init__(self, a: SymmetricOperator, family, config: SchemeConfig):
        self.config = config
        self.a = a
        scheme = config.scheme
        tau = config.tau

        if scheme == "implicit_scalar":
            self.family = None
            self.dims = (a.dim,)
            self.p = 1
            self._scalar_cho = scipy.linalg.cho_factor(np.eye(a.dim) + tau * a.mat)
            self.cm = self.bm = self.c0m = self.b0m = None
            return

        if family is None:
            raise ValueError(f"scheme {scheme} requires a decomposition family")
        report = validate_family(family)
        if not report.complete:
            raise SchemePreconditionError("family is not complete")
        if scheme in DIRECT_SUM_SCHEMES and not report.direct_sum:
            raise SchemePreconditionError(
                f"scheme {scheme} requires a direct-sum family"
            )
        self.family = family
        self.dims = family.dims
        self.p = family.p
        self.offsets = [0]
        for d in self.dims:
            self.offsets.append(self.offsets[-1] + d)

        c = assembly.assemble_mass(family)
        b = assembly.assemble_stiffness(family, a)
        self.c, self.b = c, b
        self.cm, self.bm = c.mat, b.mat
        c0 = assembly.diagonal_part(c)
        b0 = assembly.diagonal_part(b)
        self.c0, self.b0 = c0, b0
        self.c0m, self.b0m = c0.mat, b0.mat

        if scheme == "implicit_vector":
            m = self.cm + tau * self.bm
            if report.direct_sum:
                self._vector_cho = scipy.linalg.cho_factor(m)
                self._vector_op = None
            else:
                self._vector_cho = None
                self._vector_op = SymmetricOperator(m)
        elif scheme == "three_level_split":
            mu, sigma = config.mu, config.sigma
            blocks = [
                (mu / tau) * c0.block(i, i) + sigma * b0.block(i, i)
                for i in range(self.p)
            ]
            self._diag_solver = _BlockCholesky(self.dims, blocks)
        elif scheme == "three_level_directsum":
            sigma = config.sigma
            blocks = [
                np.eye(d) / (2.0 * tau) + sigma * b0.block(i, i)
                for i, d in enumerate(self.dims)
            ]
            self._diag_solver = _BlockCholesky(self.dims, blocks)
        elif scheme == "two_level_directsum":
            sigma = config.sigma
            blocks = [
                np.eye(d) / tau + sigma * b0.block(i, i)
                for i, d in enumerate(self.dims)
            ]
            self._diag_solver = _BlockCholesky(self.dims, blocks)
        elif scheme == "factorized":
            sigma = config.sigma
            self._sweep_factors = [
                scipy.linalg.cho_factor(np.eye(d) + tau * sigma * 0.5 * b.block(i, i))
                for i, d in enumerate(self.dims)
            ]

    @property
    def state_dim(self) -> int:
        return sum(self.dims)

    @property
    def three_level(self) -> bool:
        return self.config.scheme in THREE_LEVEL_SCHEMES

    def forcing_flat(self, f_global: np.ndarray) -> np.ndarray:
        if self.family is None:
            return np.asarray(f_global, dtype=float)
        return np.concatenate(
            [self.family.restrict(i, f_global) for i in range(self.p)]
        )

    def initial_state(self, u0: np.ndarray) -> np.ndarray:
        if self.family is None:
            return np.asarray(u0, dtype=float).copy()
        return decompose(self.family, u0).flatten()

    def reconstruct_flat(self, w: np.ndarray) -> np.ndarray:
        if self.family is None:
            return w.copy()
        v = BlockVector.from_flat(self.dims, w)
        return reconstruct(self.family, v)

    def implicit_step(self, w: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Implicit vector step, also the first step of three-level schemes."""
        tau = self.config.tau
        if self.family is None:
            return scipy.linalg.cho_solve(self._scalar_cho, w + tau * f)
        rhs = self.cm @ w + tau * f
        m = self.cm + tau * self.bm
        if getattr(self, "_vector_cho", None) is not None:
            return scipy.linalg.cho_solve(self._vector_cho, rhs)
        op = getattr(self, "_vector_op", None)
        if op is None:
            op = SymmetricOperator(m)
        return linops.solve_spsd(
            op, rhs, tol=self.config.solver_tol, max_iter=self.config.solver_max_iter
        )

    def step(self, w: np.ndarray, w_prev, f: np.ndarray) -> np.ndarray:
        """Advance one step; w_prev is required for three-level schemes."""
        cfg = self.config
        tau = cfg.tau
        scheme = cfg.scheme
        if scheme == "implicit_scalar":
            return scipy.linalg.cho_solve(self._scalar_cho, w + tau * f)
        if scheme == "implicit_vector":
            return self.implicit_step(w, f)
        if scheme == "three_level_split":
            rhs = _rhs_three_level_split(
                self.cm, self.c0m, self.bm, self.b0m, f, w, w_prev, tau, cfg.mu, cfg.sigma
            )
            return self._diag_solver.solve(rhs)
        if scheme == "three_level_directsum":
            rhs = _rhs_three_level_directsum(
                self.bm, self.b0m, f, w, w_prev, tau, cfg.sigma
            )
            return self._diag_solver.solve(rhs)
        if scheme == "two_level_directsum":
            rhs = _rhs_two_level_directsum(self.bm, self.b0m, f, w, tau, cfg.sigma)
            return self._diag_solver.solve(rhs)
        if scheme == "factorized":
            rhs = f - self.bm @ w
            z = _forward_sweep(
                self.bm, self.dims, self._sweep_factors, self.offsets, tau * cfg.sigma, rhs
            )
            d = _backward_sweep(
                self.bm, self.dims, self._sweep_factors, self.offsets, tau * cfg.sigma, rhs=z
            )
            return w + tau * d
        raise ValueError(f"unknown scheme {scheme!r}")


def run(problem: EvolutionProblem, family, config: SchemeConfig) -> Trajectory:
    """Run the configured scheme for N steps and attach monitor records."""
    engine = _Engine(problem.A, family, config)
    tau, n_steps = config.tau, config.steps

    regime = threshold_flags(config, engine.p)
    for msg in regime:
        warnings.warn(msg, UserWarning, stacklevel=2)

    times = [k * tau for k in range(n_steps + 1)]
    f_samples = [problem.forcing(t) for t in times[:-1]]

    states = [engine.initial_state(problem.initial)]
    if engine.three_level and n_steps >= 1:
        if config.first_step == "exact":
            if problem.exact is None:
                raise ValueError("first_step='exact' requires a problem with an exact solution")
            if engine.family is None:
                states.append(np.asarray(problem.exact(tau), dtype=float))
            else:
                states.append(decompose(engine.family, problem.exact(tau)).flatten())
        else:
            states.append(engine.implicit_step(states[0], engine.forcing_flat(f_samples[0])))
        start = 1
    else:
        start = 0

    for n in range(start, n_steps):
        f = engine.forcing_flat(f_samples[n])
        w_prev = states[n - 1] if engine.three_level else None
        states.append(engine.step(states[n], w_prev, f))

    ys = [engine.reconstruct_flat(w) for w in states]
    half_steps = []
    if engine.three_level:
        half_steps = [0.5 * (ys[k + 1] + ys[k]) for k in range(len(ys) - 1)]

    context = {
        "A": problem.A,
        "f_samples": f_samples,
        "engine": engine,
    }
    if engine.three_level:
        context["D"] = d_matrix(
            config.scheme, engine.c, engine.c0, engine.b, engine.b0,
            tau, config.mu, config.sigma,
        )
    traj = Trajectory(
        config=config,
        times=times,
        ys=ys,
        half_steps=half_steps,
        states=states,
        regime_warnings=regime,
        family=family if config.scheme != "implicit_scalar" else None,
        context=context,
    )
    traj.records = monitor_energy(traj)
    return traj


def _bound_ok(lhs: float, bound: float) -> bool:
    return lhs <= bound + BOUND_SLACK * max(1.0, abs(bound))


def monitor_energy(traj: Trajectory) -> list:
    """Per-step energy records checking the scheme's a priori estimate.

    Two-level schemes: ||y^n||_A^2 <= ||u^0||_A^2 + (1/2) sum_{k<n} tau ||f^k||^2.
    Three-level schemes: the half-step bound with the D term evaluated on
    (w^1 - w^0)/tau, plus the per-step decay E^{n+1} <= E^n + (tau/2)||f^n||^2.
    """
    a = traj.context["A"]
    f_samples = traj.context["f_samples"]
    tau = traj.config.tau
    ys = traj.ys
    fnorm2 = [float(np.dot(f, f)) for f in f_samples]

    def a_energy(y):
        return linops.energy_norm(a, y) ** 2

    records = []
    if traj.config.scheme not in THREE_LEVEL_SCHEMES:
        base = a_energy(ys[0])
        acc = 0.0
        for n, y in enumerate(ys):
            if n > 0:
                acc += 0.5 * tau * fnorm2[n - 1]
            en = a_energy(y)
            bound = base + acc
            records.append(
                MonitorRecord(
                    step=n,
                    time=traj.times[n],
                    a_energy=en,
                    forcing_sum=acc,
                    bound=bound,
                    bound_ok=_bound_ok(en, bound),
                )
            )
        return records

    # Three-level schemes.
    d_op = traj.context["D"]
    engine = traj.context["engine"]
    bm = engine.bm
    states = traj.states
    if len(states) < 2:
        y0 = ys[0]
        en = a_energy(y0)
        return [
            MonitorRecord(0, 0.0, en, 0.0, en, True)
        ]

    r1 = (states[1] - states[0]) / tau
    d_term = float(r1 @ (d_op.mat @ r1))
    half0 = a_energy(0.5 * (ys[1] + ys[0]))

    def three_energy(n):
        s = 0.5 * (states[n] + states[n - 1])
        r = states[n] - states[n - 1]
        return float(s @ (bm @ s)) + float(r @ (d_op.mat @ r)) / tau**2

    prev_e = None
    acc = 0.0
    for n in range(1, len(ys)):
        if n > 1:
            acc += 0.5 * tau * fnorm2[n - 1]
        half_en = a_energy(0.5 * (ys[n] + ys[n - 1]))
        bound = half0 + d_term + acc
        e_n = three_energy(n)
        if prev_e is None:
            decay_ok = True
        else:
            decay_ok = _bound_ok(e_n, prev_e + 0.5 * tau * fnorm2[n - 1])
        prev_e = e_n
        records.append(
            MonitorRecord(
                step=n,
                time=traj.times[n],
                a_energy=a_energy(ys[n]),
                forcing_sum=acc,
                bound=bound,
                bound_ok=_bound_ok(half_en, bound),
                half_energy=half_en,
                three_level_energy=e_n,
                decay_ok=decay_ok,
            )
        )
    return records


def amplification_matrix(
    a: SymmetricOperator, family, config: SchemeConfig, cap: int = ORACLE_CAP
) -> np.ndarray:
    """One-step linear map of the homogeneous scheme, built column by column.

    Two-level schemes act on w^n; three-level schemes act on the stacked pair
    (w^n, w^{n-1}).
    """
    engine = _Engine(a, family, config)
    s = engine.state_dim
    dim = 2 * s if engine.three_level else s
    if dim > cap:
        raise OracleScaleError(f"state dimension {dim} exceeds oracle cap {cap}")
    zero_f = np.zeros(s)
    m = np.zeros((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        if engine.three_level:
            w, w_prev = e[:s], e[s:]
            w_next = engine.step(w, w_prev, zero_f)
            m[:s, j] = w_next
            m[s:, j] = w
        else:
            m[:, j] = engine.step(e, None, zero_f)
    return m
