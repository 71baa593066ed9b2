"""Experiment engine: declarative configs, convergence and stability studies,
threshold maps, timing comparisons, and CSV/JSON reporting."""

from __future__ import annotations

import csv
import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import assembly, decomposition, linops, problems, schemes
from .decomposition import DecompositionFamily
from .problems import EvolutionProblem
from .schemes import SchemeConfig


class ConfigError(ValueError):
    """The experiment configuration is malformed or references missing files."""


@dataclass
class ExperimentConfig:
    study: str
    problem: dict
    family: dict | None = None
    schemes: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    output_dir: str | None = None
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {"study", "problem", "family", "schemes", "params", "output_dir", "seed", "threads"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in doc:
            raise ConfigError("config requires a [problem] table")
        return cls(
            study=doc.get("study", "run"),
            problem=dict(doc["problem"]),
            family=dict(doc["family"]) if doc.get("family") else None,
            schemes=[dict(s) for s in doc.get("schemes", [])],
            params=dict(doc.get("params", {})),
            output_dir=doc.get("output_dir"),
            seed=int(doc.get("seed", 0)),
            threads=int(doc.get("threads", 1)),
        )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
    elif path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib

        doc = tomllib.loads(text)
    else:
        raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")
    return ExperimentConfig.from_dict(doc)


def build_problem(spec: dict) -> EvolutionProblem:
    spec = dict(spec)
    name = spec.pop("name", "heat_1d")
    if name == "heat_1d":
        m = int(spec.pop("m", 32))
        length = float(spec.pop("length", 1.0))
        shape = spec.pop("shape", "separable")
        horizon = float(spec.pop("horizon", 1.0))
        a = problems.heat_1d(m, length)
    elif name == "heat_2d":
        mx = int(spec.pop("mx", 16))
        my = int(spec.pop("my", 16))
        shape = spec.pop("shape", "homogeneous")
        horizon = float(spec.pop("horizon", 1.0))
        a = problems.heat_2d(mx, my)
        length = 1.0
    elif name == "matrix":
        from . import mmio

        path = spec.pop("path")
        a = mmio.read_operator(path)
        shape = spec.pop("shape", "homogeneous")
        horizon = float(spec.pop("horizon", 1.0))
        length = 1.0
    else:
        raise ConfigError(f"unknown problem name {name!r}")
    if spec:
        raise ConfigError(f"unknown problem keys: {sorted(spec)}")
    if shape == "homogeneous":
        if name == "heat_1d":
            return problems.homogeneous(a, horizon=horizon)
        rng = np.random.default_rng(0)
        u0 = rng.standard_normal(a.dim)
        return problems.homogeneous(a, initial=u0, horizon=horizon)
    if name != "heat_1d":
        raise ConfigError("manufactured shapes are 1D only")
    return problems.manufactured(a, shape=shape, horizon=horizon, length=length)


def build_family(spec: dict | None, n: int) -> DecompositionFamily | None:
    if spec is None:
        return None
    spec = dict(spec)
    if "preset" in spec:
        preset = spec.pop("preset")
        if spec:
            raise ConfigError(f"unknown family keys: {sorted(spec)}")
        families = decomposition.standard_families(n)
        if preset not in families:
            raise ConfigError(
                f"unknown family preset {preset!r}; choose from {sorted(families)}"
            )
        return families[preset]
    if "manifest" in spec:
        path = Path(spec.pop("manifest"))
        if spec:
            raise ConfigError(f"unknown family keys: {sorted(spec)}")
        if not path.exists():
            raise ConfigError(f"family manifest not found: {path}")
        return decomposition.load_manifest(path)
    kind = spec.pop("kind", None)
    if kind == "direct_sum":
        return decomposition.direct_sum_family(n, spec.pop("partition"))
    if kind == "overlapping":
        return decomposition.overlapping_family(
            n, spec.pop("subdomains"), weights=spec.pop("weights", None)
        )
    raise ConfigError(f"family spec needs 'preset', 'manifest', or a known 'kind', got {kind!r}")


def build_scheme_config(spec: dict, tau=None, steps=None) -> SchemeConfig:
    spec = dict(spec)
    spec.pop("expected_order", None)
    spec.pop("order_tol", None)
    if tau is not None:
        spec["tau"] = tau
    if steps is not None:
        spec["steps"] = steps
    spec.setdefault("steps", 1)
    try:
        return SchemeConfig(**spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scheme spec {spec}: {exc}") from exc


@dataclass
class StudyReport:
    study: str
    columns: list
    rows: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.verdicts.values())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(report: StudyReport, path) -> None:
    """RFC 4180 CSV with a header row; floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(report.columns)
        for row in report.rows:
            writer.writerow([_fmt(row.get(c, "")) for c in report.columns])


def write_summary(report: StudyReport, path) -> None:
    doc = {
        "study": report.study,
        "verdicts": report.verdicts,
        "ok": report.ok,
        "timings": report.timings,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def trajectory_report(traj: schemes.Trajectory) -> StudyReport:
    cols = ["n", "t", "a_norm_sq", "bound", "bound_ok"]
    rows = [
        {
            "n": r.step,
            "t": r.time,
            "a_norm_sq": r.a_energy,
            "bound": r.bound,
            "bound_ok": r.bound_ok,
        }
        for r in traj.records
    ]
    verdict = all(r.bound_ok for r in traj.records) and all(
        r.decay_ok in (None, True) for r in traj.records
    )
    report = StudyReport("run", cols, rows)
    report.verdicts["energy_bounds"] = bool(verdict)
    return report


# ---------------------------------------------------------------------------
# Studies.


def _max_error(traj: schemes.Trajectory, problem: EvolutionProblem) -> float:
    """Max-over-time A-norm error; half-step points for three-level schemes."""
    a = problem.A
    tau = traj.config.tau
    if traj.config.scheme in schemes.THREE_LEVEL_SCHEMES:
        errs = [
            linops.energy_norm(a, h - problem.exact((k + 0.5) * tau))
            for k, h in enumerate(traj.half_steps)
        ]
    else:
        errs = [
            linops.energy_norm(a, y - problem.exact(k * tau))
            for k, y in enumerate(traj.ys)
        ]
    return max(errs)


def convergence_study(cfg: ExperimentConfig) -> StudyReport:
    """Observed temporal order over a tau-halving sequence."""
    problem = build_problem(cfg.problem)
    if problem.exact is None:
        raise ConfigError("convergence study requires a problem with an exact solution")
    family = build_family(cfg.family, problem.dim)
    tau0 = float(cfg.params.get("tau0", 0.1))
    levels = int(cfg.params.get("levels", 4))
    horizon = problem.horizon

    cols = ["scheme", "mu", "sigma", "tau", "steps", "error", "order"]
    report = StudyReport("convergence", cols)
    for spec in cfg.schemes:
        errors = []
        expected = spec.get("expected_order")
        order_tol = float(spec.get("order_tol", 0.25))
        label = spec.get("scheme", "?")
        last_order = None
        for lvl in range(levels):
            tau = tau0 / 2**lvl
            steps = round(horizon / tau)
            sc = build_scheme_config(spec, tau=tau, steps=steps)
            traj = schemes.run(problem, family, sc)
            err = _max_error(traj, problem)
            order = None
            if errors:
                order = float(np.log2(errors[-1] / err))
                last_order = order
            errors.append(err)
            report.rows.append(
                {
                    "scheme": label,
                    "mu": sc.mu if sc.mu is not None else "",
                    "sigma": sc.sigma if sc.sigma is not None else "",
                    "tau": tau,
                    "steps": steps,
                    "error": err,
                    "order": order if order is not None else "",
                }
            )
        if expected is not None:
            ok = last_order is not None and abs(last_order - float(expected)) <= order_tol
            report.verdicts[f"order_{label}_sigma_{spec.get('sigma', '-')}"] = bool(ok)
    return report


def _zero_forcing(problem: EvolutionProblem) -> EvolutionProblem:
    return EvolutionProblem(
        problem.A,
        lambda t: np.zeros(problem.dim),
        problem.initial,
        problem.horizon,
        None,
    )


def stability_sweep(cfg: ExperimentConfig) -> StudyReport:
    """Energy-bound flags over a tau grid spanning several orders of magnitude."""
    problem = build_problem(cfg.problem)
    family = build_family(cfg.family, problem.dim)
    forcing = cfg.params.get("forcing", "problem")
    if forcing == "zero":
        problem = _zero_forcing(problem)
    elif forcing != "problem":
        raise ConfigError(f"unknown forcing mode {forcing!r}")
    steps = int(cfg.params.get("steps", 200))
    lam_max = linops.max_eigenvalue(problem.A)
    factors = cfg.params.get("tau_factors", [1.0, 10.0, 100.0, 1000.0, 10000.0])
    base_tau = 2.0 / lam_max

    cols = [
        "scheme", "mu", "sigma", "tau", "tau_lambda_max", "steps",
        "violations", "max_growth", "monotone", "in_regime",
    ]
    report = StudyReport("stability_sweep", cols)
    all_in_regime_clean = True
    for spec in cfg.schemes:
        for factor in factors:
            tau = base_tau * float(factor)
            sc = build_scheme_config(spec, tau=tau, steps=steps)
            traj = schemes.run(problem, family, sc)
            in_regime = not traj.regime_warnings
            violations = sum(1 for r in traj.records if not r.bound_ok)
            violations += sum(1 for r in traj.records if r.decay_ok is False)
            energies = [r.a_energy for r in traj.records]
            base_en = max(energies[0], 1e-300)
            max_growth = max(energies) / base_en
            if sc.scheme in schemes.THREE_LEVEL_SCHEMES:
                series = [r.three_level_energy for r in traj.records if r.three_level_energy is not None]
            else:
                series = energies
            monotone = all(
                b <= a * (1.0 + schemes.BOUND_SLACK) + schemes.BOUND_SLACK
                for a, b in zip(series, series[1:])
            )
            if in_regime and violations:
                all_in_regime_clean = False
            report.rows.append(
                {
                    "scheme": sc.scheme,
                    "mu": sc.mu if sc.mu is not None else "",
                    "sigma": sc.sigma if sc.sigma is not None else "",
                    "tau": tau,
                    "tau_lambda_max": tau * lam_max,
                    "steps": steps,
                    "violations": violations,
                    "max_growth": max_growth,
                    "monotone": monotone,
                    "in_regime": in_regime,
                }
            )
    report.verdicts["no_violations_in_regime"] = all_in_regime_clean
    return report


def _certificate(scheme: str, ops: dict, tau: float, mu, sigma) -> float:
    if scheme == "three_level_split":
        return schemes.check_D_operator(
            ops["C"], ops["C0"], ops["B"], ops["B0"], tau, mu, sigma
        )
    if scheme == "three_level_directsum":
        d = schemes.d_matrix("three_level_directsum", ops["C"], ops["C0"], ops["B"], ops["B0"], tau, None, sigma)
        return linops.min_eigenvalue(d)
    if scheme == "two_level_directsum":
        return schemes.two_level_certificate(ops["B"], ops["B0"], sigma)
    if scheme == "factorized":
        return schemes.factorized_certificate(ops["B"], ops["B1"], ops["B2"], tau, sigma)
    raise ConfigError(f"threshold map does not support scheme {scheme!r}")


def long_run_bounded(
    problem: EvolutionProblem,
    family,
    config: SchemeConfig,
    steps: int = 10_000,
) -> tuple:
    """Boundedness probe: run the homogeneous scheme for many steps and check
    that the scheme's energy never grows beyond rounding slack."""
    cfg = SchemeConfig(
        scheme=config.scheme,
        tau=config.tau,
        steps=steps,
        mu=config.mu,
        sigma=config.sigma,
        solver_tol=config.solver_tol,
    )
    traj = schemes.run(_zero_forcing(problem), family, cfg)
    if cfg.scheme in schemes.THREE_LEVEL_SCHEMES:
        series = [r.three_level_energy for r in traj.records if r.three_level_energy is not None]
    else:
        series = [r.a_energy for r in traj.records]
    base = max(series[0], 1e-300)
    growth = max(series) / base
    return growth <= 1.0 + 1e-6, growth


def threshold_map(cfg: ExperimentConfig) -> StudyReport:
    """Certificate eigenvalues and amplification spectral radii over a
    (mu, sigma) grid, with a long-run boundedness probe per cell."""
    problem = build_problem(cfg.problem)
    family = build_family(cfg.family, problem.dim)
    if family is None:
        raise ConfigError("threshold map requires a family")
    spec = cfg.schemes[0] if cfg.schemes else None
    if spec is None:
        raise ConfigError("threshold map requires one scheme entry")
    scheme = spec["scheme"]
    lam_max = linops.max_eigenvalue(problem.A)
    tau = float(cfg.params.get("tau", 10.0 * 2.0 / lam_max))
    mus = [float(v) for v in cfg.params.get("mus", [spec.get("mu", 1.0)])]
    sigmas = [float(v) for v in cfg.params.get("sigmas", [spec.get("sigma", 1.0)])]
    long_steps = int(cfg.params.get("long_steps", 10_000))

    ops = assembly.assemble_all(family, problem.A)
    p = family.p

    cols = [
        "scheme", "mu", "sigma", "tau", "certificate_min_eig",
        "spectral_radius", "bounded", "growth", "in_regime",
    ]
    report = StudyReport("threshold_map", cols)
    certificates_imply_bounded = True
    mu_grid = mus if scheme == "three_level_split" else [None]
    for mu in mu_grid:
        for sigma in sigmas:
            sc = SchemeConfig(scheme=scheme, tau=tau, steps=1, mu=mu, sigma=sigma)
            cert = _certificate(scheme, ops, tau, mu, sigma)
            amp = schemes.amplification_matrix(problem.A, family, sc)
            rho = linops.spectral_radius(amp)
            bounded, growth = long_run_bounded(problem, family, sc, steps=long_steps)
            in_regime = not schemes.threshold_flags(sc, p)
            if cert >= -1e-9 and not bounded:
                certificates_imply_bounded = False
            report.rows.append(
                {
                    "scheme": scheme,
                    "mu": mu if mu is not None else "",
                    "sigma": sigma,
                    "tau": tau,
                    "certificate_min_eig": cert,
                    "spectral_radius": rho,
                    "bounded": bounded,
                    "growth": growth,
                    "in_regime": in_regime,
                }
            )
    report.verdicts["certificates_imply_bounded"] = certificates_imply_bounded
    return report


def timing_study(cfg: ExperimentConfig) -> StudyReport:
    """Median per-step wall time: monolithic implicit solve vs block-diagonal
    splitting solves vs factorized triangular sweeps."""
    problem = build_problem(cfg.problem)
    n = problem.dim
    family = build_family(cfg.family, n)
    if family is None:
        p = int(cfg.params.get("p", 4))
        size = n // p
        family = decomposition.direct_sum_family(
            n, [range(i * size, (i + 1) * size if i < p - 1 else n) for i in range(p)]
        )
    steps = max(int(cfg.params.get("steps", 20)), 20)
    lam_max = linops.max_eigenvalue(problem.A) if n <= linops.ORACLE_CAP else 4.0 * n
    tau = float(cfg.params.get("tau", 10.0 / lam_max))
    p = family.p
    threads = max(cfg.threads, 1)

    import scipy.linalg as sla

    ops = assembly.assemble_all(family, problem.A)
    bm = ops["B"].mat
    dims = ops["B"].dims
    offsets = ops["B"].offsets
    w0 = decomposition.decompose(family, problem.initial).flatten()
    f = np.concatenate([family.restrict(i, problem.forcing(0.0)) for i in range(p)])

    cols = ["variant", "threads", "factor_time", "median_step_time"]
    report = StudyReport("timing", cols)

    def add_row(variant, nthreads, factor_time, step_times):
        report.rows.append(
            {
                "variant": variant,
                "threads": nthreads,
                "factor_time": factor_time,
                "median_step_time": statistics.median(step_times),
            }
        )

    # Monolithic implicit vector solve (C = I for a direct sum).
    t0 = time.perf_counter()
    mono = sla.cho_factor(np.eye(sum(dims)) + tau * bm)
    factor_time = time.perf_counter() - t0
    w = w0.copy()
    times = []
    for _ in range(steps):
        t0 = time.perf_counter()
        w = sla.cho_solve(mono, w + tau * f)
        times.append(time.perf_counter() - t0)
    add_row("monolithic_implicit", 1, factor_time, times)

    # Block-diagonal two-level splitting solves.
    sigma = p / 2.0
    t0 = time.perf_counter()
    solver = schemes._BlockCholesky(
        dims,
        [np.eye(d) / tau + sigma * ops["B0"].block(i, i) for i, d in enumerate(dims)],
    )
    factor_time = time.perf_counter() - t0
    b0m = ops["B0"].mat
    w = w0.copy()
    times = []
    for _ in range(steps):
        t0 = time.perf_counter()
        rhs = schemes._rhs_two_level_directsum(bm, b0m, f, w, tau, sigma)
        w = solver.solve(rhs)
        times.append(time.perf_counter() - t0)
    add_row("block_diagonal_split", 1, factor_time, times)

    if threads > 1:
        w = w0.copy()
        times = []
        with ThreadPoolExecutor(max_workers=threads) as pool:
            def solve_block(args):
                i, rhs_i = args
                return sla.cho_solve(solver.factors[i], rhs_i)

            for _ in range(steps):
                t0 = time.perf_counter()
                rhs = schemes._rhs_two_level_directsum(bm, b0m, f, w, tau, sigma)
                pieces = list(
                    pool.map(
                        solve_block,
                        [
                            (i, rhs[offsets[i] : offsets[i + 1]])
                            for i in range(p)
                        ],
                    )
                )
                w = np.concatenate(pieces)
                times.append(time.perf_counter() - t0)
        add_row("block_diagonal_split", threads, factor_time, times)

    # Factorized triangular sweeps.
    sigma = 0.5
    t0 = time.perf_counter()
    sweep_factors = [
        sla.cho_factor(np.eye(d) + tau * sigma * 0.5 * ops["B"].block(i, i))
        for i, d in enumerate(dims)
    ]
    factor_time = time.perf_counter() - t0
    w = w0.copy()
    times = []
    for _ in range(steps):
        t0 = time.perf_counter()
        rhs = f - bm @ w
        z = schemes._forward_sweep(bm, dims, sweep_factors, offsets, tau * sigma, rhs)
        d = schemes._backward_sweep(bm, dims, sweep_factors, offsets, tau * sigma, z)
        w = w + tau * d
        times.append(time.perf_counter() - t0)
    add_row("factorized_sweeps", 1, factor_time, times)

    report.verdicts["completed"] = True
    return report


def run_single(cfg: ExperimentConfig) -> StudyReport:
    problem = build_problem(cfg.problem)
    family = build_family(cfg.family, problem.dim)
    if not cfg.schemes:
        raise ConfigError("run requires one scheme entry")
    sc = build_scheme_config(cfg.schemes[0])
    traj = schemes.run(problem, family, sc)
    return trajectory_report(traj)


def validate_family_study(cfg: ExperimentConfig) -> StudyReport:
    if cfg.family is None:
        raise ConfigError("validate-family requires a [family] table")
    n = cfg.params.get("n")
    if n is None:
        problem = build_problem(cfg.problem)
        n = problem.dim
    family = build_family(cfg.family, int(n))
    rep = decomposition.validate_family(family)
    cols = [
        "n", "p", "kind", "complete", "each_gram_pd", "direct_sum",
        "min_eig_stack", "min_eig_gram", "max_direct_sum_deviation",
    ]
    report = StudyReport("validate_family", cols)
    report.rows.append(
        {
            "n": family.n,
            "p": family.p,
            "kind": family.kind,
            "complete": rep.complete,
            "each_gram_pd": rep.each_gram_pd,
            "direct_sum": rep.direct_sum,
            "min_eig_stack": rep.min_eig_stack,
            "min_eig_gram": rep.min_eig_gram,
            "max_direct_sum_deviation": rep.max_direct_sum_deviation,
        }
    )
    report.verdicts["family_valid"] = rep.ok
    return report


STUDIES = {
    "run": run_single,
    "convergence": convergence_study,
    "stability_sweep": stability_sweep,
    "threshold_map": threshold_map,
    "timing": timing_study,
    "validate_family": validate_family_study,
}


def run_study(cfg: ExperimentConfig) -> StudyReport:
    if cfg.study not in STUDIES:
        raise ConfigError(f"unknown study {cfg.study!r}; choose from {sorted(STUDIES)}")
    t0 = time.perf_counter()
    report = STUDIES[cfg.study](cfg)
    report.timings["wall_seconds"] = time.perf_counter() - t0
    return report
