import numpy as np
import pytest

from splitdecomp import assembly, decomposition as dec, linops, problems, schemes
from splitdecomp.decomposition import BlockVector
from splitdecomp.schemes import SchemeConfig


@pytest.fixture(scope="module")
def heat8():
    return problems.heat_1d(8)


@pytest.fixture(scope="module")
def families8():
    return dec.standard_families(8)


def _trivial(n):
    return dec.direct_sum_family(n, [range(n)])


# ---------------------------------------------------------------------------
# Independent scalar recursions used as oracles for the p = 1 reductions.
# With the trivial family C = C0 = I, B = B0 = A and B1 = B2 = A/2, every
# scheme collapses to a dense recursion in the original variable.


def _scalar_trajectory(scheme, a, f_samples, u0, tau, steps, mu=None, sigma=None):
    n = a.shape[0]
    eye = np.eye(n)
    ys = [np.asarray(u0, dtype=float)]
    if scheme in ("three_level_split", "three_level_directsum") and steps >= 1:
        ys.append(np.linalg.solve(eye + tau * a, ys[0] + tau * f_samples[0]))
        start = 1
    else:
        start = 0
    for k in range(start, steps):
        f = f_samples[k]
        y = ys[k]
        if scheme == "implicit_vector":
            ys.append(np.linalg.solve(eye + tau * a, y + tau * f))
        elif scheme == "two_level_directsum":
            lhs = eye / tau + sigma * a
            ys.append(np.linalg.solve(lhs, f + y / tau - (1.0 - sigma) * (a @ y)))
        elif scheme == "factorized":
            half = eye + tau * sigma * 0.5 * a
            d = np.linalg.solve(half @ half, f - a @ y)
            ys.append(y + tau * d)
        elif scheme == "three_level_split":
            ym1 = ys[k - 1]
            lhs = (mu / tau) * eye + sigma * a
            rhs = (
                f
                + (mu / tau) * y
                - ((1.0 - mu) / tau) * (y - ym1)
                - a @ ((1.0 - 2.0 * sigma) * y + sigma * ym1)
            )
            ys.append(np.linalg.solve(lhs, rhs))
        elif scheme == "three_level_directsum":
            ym1 = ys[k - 1]
            lhs = eye / (2.0 * tau) + sigma * a
            rhs = f + ym1 / (2.0 * tau) - a @ ((1.0 - 2.0 * sigma) * y + sigma * ym1)
            ys.append(np.linalg.solve(lhs, rhs))
        else:
            raise ValueError(scheme)
    return ys


_P1_CONFIGS = [
    ("implicit_vector", {}),
    ("three_level_split", {"mu": 0.8, "sigma": 0.6}),
    ("three_level_directsum", {"sigma": 0.5}),
    ("two_level_directsum", {"sigma": 0.7}),
    ("factorized", {"sigma": 0.5}),
]


class TestScalarReduction:
    @pytest.mark.parametrize("scheme,params", _P1_CONFIGS)
    def test_p1_matches_scalar_recursion(self, scheme, params, heat8):
        tau, steps = 0.02, 30
        prob = problems.manufactured(heat8)
        cfg = SchemeConfig(scheme=scheme, tau=tau, steps=steps, **params)
        traj = schemes.run(prob, _trivial(8), cfg)
        f_samples = [prob.forcing(k * tau) for k in range(steps)]
        oracle = _scalar_trajectory(
            scheme, heat8.mat, f_samples, prob.initial, tau, steps, **params
        )
        for y, z in zip(traj.ys, oracle):
            assert np.allclose(y, z, rtol=1e-12, atol=1e-12 * np.linalg.norm(z))

    def test_implicit_scalar_step_example(self):
        a = linops.SymmetricOperator(np.array([[1.0]]))
        y = schemes.step_implicit_scalar(a, np.zeros(1), np.ones(1), 1.0)
        assert y[0] == pytest.approx(0.5, rel=1e-15)

    def test_factorized_hand_example(self):
        # A = [1], tau = 1, sigma = 1/2, f = 0, y = 1:
        # d = -1 / (1 + 1/4)^2 = -0.64, y' = 1 - 0.64 = 0.36.
        a = linops.SymmetricOperator(np.array([[1.0]]))
        f = _trivial(1)
        ops = assembly.assemble_all(f, a)
        out = schemes.step_factorized(
            ops["B"], ops["B1"], ops["B2"],
            BlockVector([np.zeros(1)]), BlockVector([np.ones(1)]), 1.0, 0.5,
        )
        assert out.parts[0][0] == pytest.approx(0.36, rel=1e-14)


class TestStepperOracles:
    """Each block stepper against a dense solve of its defining linear system."""

    def _setup(self, heat8, families8, name="directsum_p2"):
        f = families8[name]
        ops = assembly.assemble_all(f, heat8)
        rng = np.random.default_rng(7)
        w = BlockVector.from_flat(f.dims, rng.standard_normal(sum(f.dims)))
        wm1 = BlockVector.from_flat(f.dims, rng.standard_normal(sum(f.dims)))
        g = BlockVector.from_flat(f.dims, rng.standard_normal(sum(f.dims)))
        return f, ops, w, wm1, g

    def test_implicit_vector_dense_oracle(self, heat8, families8):
        f, ops, w, _, g = self._setup(heat8, families8)
        tau = 0.01
        out = schemes.step_implicit_vector(ops["C"], ops["B"], g, w, tau)
        m = ops["C"].mat + tau * ops["B"].mat
        expected = np.linalg.solve(m, ops["C"].mat @ w.flatten() + tau * g.flatten())
        assert np.allclose(out.flatten(), expected, rtol=1e-10, atol=1e-10)

    def test_implicit_vector_overlapping_consistent(self, heat8, families8):
        # Singular system: check the residual, not the particular solution.
        f, ops, w, _, g0 = self._setup(heat8, families8, "overlap_p2")
        tau = 0.01
        g = assembly.assemble_block_rhs(f, np.random.default_rng(3).standard_normal(8))
        out = schemes.step_implicit_vector(ops["C"], ops["B"], g, w, tau)
        m = ops["C"].mat + tau * ops["B"].mat
        res = m @ out.flatten() - (ops["C"].mat @ w.flatten() + tau * g.flatten())
        assert np.linalg.norm(res) < 1e-8

    def test_three_level_split_dense_oracle(self, heat8, families8):
        f, ops, w, wm1, g = self._setup(heat8, families8, "overlap_p2")
        tau, mu, sigma = 0.05, 1.0, 0.5
        out = schemes.step_three_level_split(
            ops["C"], ops["C0"], ops["B"], ops["B0"], g, w, wm1, tau, mu, sigma
        )
        lhs = (mu / tau) * ops["C0"].mat + sigma * ops["B0"].mat
        rhs = schemes._rhs_three_level_split(
            ops["C"].mat, ops["C0"].mat, ops["B"].mat, ops["B0"].mat,
            g.flatten(), w.flatten(), wm1.flatten(), tau, mu, sigma,
        )
        assert np.allclose(out.flatten(), np.linalg.solve(lhs, rhs), rtol=1e-10, atol=1e-10)

    def test_three_level_directsum_dense_oracle(self, heat8, families8):
        f, ops, w, wm1, g = self._setup(heat8, families8, "directsum_p4")
        tau, sigma = 0.05, 1.0
        out = schemes.step_three_level_directsum(
            ops["B"], ops["B0"], g, w, wm1, tau, sigma
        )
        lhs = np.eye(8) / (2.0 * tau) + sigma * ops["B0"].mat
        rhs = schemes._rhs_three_level_directsum(
            ops["B"].mat, ops["B0"].mat, g.flatten(), w.flatten(), wm1.flatten(), tau, sigma
        )
        assert np.allclose(out.flatten(), np.linalg.solve(lhs, rhs), rtol=1e-10, atol=1e-10)

    def test_two_level_directsum_dense_oracle(self, heat8, families8):
        f, ops, w, _, g = self._setup(heat8, families8)
        tau, sigma = 0.02, 1.0
        out = schemes.step_two_level_directsum(ops["B"], ops["B0"], g, w, tau, sigma)
        lhs = np.eye(8) / tau + sigma * ops["B0"].mat
        rhs = schemes._rhs_two_level_directsum(
            ops["B"].mat, ops["B0"].mat, g.flatten(), w.flatten(), tau, sigma
        )
        assert np.allclose(out.flatten(), np.linalg.solve(lhs, rhs), rtol=1e-10, atol=1e-10)

    def test_factorized_dense_oracle(self, heat8, families8):
        f, ops, w, _, g = self._setup(heat8, families8, "directsum_p4")
        tau, sigma = 0.02, 0.5
        out = schemes.step_factorized(
            ops["B"], ops["B1"], ops["B2"], g, w, tau, sigma
        )
        m = (np.eye(8) + tau * sigma * ops["B1"].mat) @ (np.eye(8) + tau * sigma * ops["B2"].mat)
        d = np.linalg.solve(m, g.flatten() - ops["B"].mat @ w.flatten())
        assert np.allclose(out.flatten(), w.flatten() + tau * d, rtol=1e-10, atol=1e-10)


class TestFixedPoints:
    """Steady states A u* = f are fixed points of every stepper."""

    @pytest.mark.parametrize("scheme,params", [
        ("implicit_vector", {}),
        ("three_level_split", {"mu": 1.0, "sigma": 0.5}),
        ("three_level_directsum", {"sigma": 0.5}),
        ("two_level_directsum", {"sigma": 1.0}),
        ("factorized", {"sigma": 0.5}),
    ])
    def test_steady_state_preserved(self, scheme, params, heat8, families8):
        fam = families8["directsum_p2"]
        g = np.ones(8)
        u_star = np.linalg.solve(heat8.mat, g)
        prob = problems.EvolutionProblem(heat8, lambda t: g, u_star, 1.0)
        cfg = SchemeConfig(scheme=scheme, tau=0.3, steps=20, **params)
        traj = schemes.run(prob, fam, cfg)
        for y in traj.ys:
            assert np.allclose(y, u_star, rtol=1e-10, atol=1e-10)


class TestSchemeConfig:
    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="magic", tau=0.1, steps=1)

    def test_requires_sigma(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="two_level_directsum", tau=0.1, steps=1)

    def test_three_level_split_requires_mu(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="three_level_split", tau=0.1, steps=1, sigma=0.5)

    def test_nonpositive_tau(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="implicit_scalar", tau=0.0, steps=1)

    def test_negative_steps(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="implicit_scalar", tau=0.1, steps=-1)

    def test_zero_steps_allowed(self, heat8):
        prob = problems.homogeneous(heat8)
        cfg = SchemeConfig(scheme="implicit_scalar", tau=0.1, steps=0)
        traj = schemes.run(prob, None, cfg)
        assert len(traj.ys) == 1
        assert np.array_equal(traj.ys[0], prob.initial)


class TestThresholdFlags:
    def test_at_threshold_no_warning(self):
        cfg = SchemeConfig("three_level_split", tau=0.1, steps=1, mu=1.0, sigma=0.5)
        assert schemes.threshold_flags(cfg, p=2) == []

    def test_below_threshold_warns(self):
        cfg = SchemeConfig("three_level_split", tau=0.1, steps=1, mu=0.99, sigma=0.5)
        flags = schemes.threshold_flags(cfg, p=2)
        assert len(flags) == 1 and "outside guaranteed regime" in flags[0]

    @pytest.mark.parametrize("scheme,params,p,ok", [
        ("three_level_directsum", {"sigma": 0.5}, 2, True),
        ("three_level_directsum", {"sigma": 0.4}, 2, False),
        ("two_level_directsum", {"sigma": 1.0}, 2, True),
        ("two_level_directsum", {"sigma": 0.9}, 2, False),
        ("factorized", {"sigma": 0.5}, 4, True),
        ("factorized", {"sigma": 0.4}, 4, False),
    ])
    def test_sigma_thresholds(self, scheme, params, p, ok):
        cfg = SchemeConfig(scheme, tau=0.1, steps=1, **params)
        assert (schemes.threshold_flags(cfg, p) == []) == ok

    def test_run_emits_warning_not_error(self, heat8, families8):
        prob = problems.homogeneous(heat8)
        cfg = SchemeConfig("two_level_directsum", tau=0.01, steps=5, sigma=0.1)
        with pytest.warns(UserWarning, match="outside guaranteed regime"):
            traj = schemes.run(prob, families8["directsum_p2"], cfg)
        assert traj.regime_warnings


class TestPreconditions:
    def test_direct_sum_scheme_rejects_overlap(self, heat8, families8):
        prob = problems.homogeneous(heat8)
        for scheme in schemes.DIRECT_SUM_SCHEMES:
            cfg = SchemeConfig(scheme, tau=0.01, steps=1, sigma=1.0)
            with pytest.raises(schemes.SchemePreconditionError):
                schemes.run(prob, families8["overlap_p2"], cfg)

    def test_family_required(self, heat8):
        prob = problems.homogeneous(heat8)
        cfg = SchemeConfig("implicit_vector", tau=0.01, steps=1)
        with pytest.raises(ValueError):
            schemes.run(prob, None, cfg)

    def test_exact_first_step_needs_exact_solution(self, heat8, families8):
        prob = problems.homogeneous(heat8)
        cfg = SchemeConfig(
            "three_level_directsum", tau=0.01, steps=2, sigma=0.5, first_step="exact"
        )
        with pytest.raises(ValueError):
            schemes.run(prob, families8["directsum_p2"], cfg)


class TestRunEquivalences:
    def test_vector_matches_scalar_direct_sum(self, heat8, families8):
        prob = problems.manufactured(heat8)
        tau, steps = 0.01, 50
        t1 = schemes.run(prob, None, SchemeConfig("implicit_scalar", tau=tau, steps=steps))
        t2 = schemes.run(
            prob, families8["directsum_p2"], SchemeConfig("implicit_vector", tau=tau, steps=steps)
        )
        for y, z in zip(t1.ys, t2.ys):
            assert np.allclose(y, z, rtol=1e-10, atol=1e-12)

    def test_vector_matches_scalar_overlapping(self, heat8, families8):
        prob = problems.manufactured(heat8)
        tau, steps = 0.01, 30
        t1 = schemes.run(prob, None, SchemeConfig("implicit_scalar", tau=tau, steps=steps))
        t2 = schemes.run(
            prob, families8["overlap_p2"], SchemeConfig("implicit_vector", tau=tau, steps=steps)
        )
        for y, z in zip(t1.ys, t2.ys):
            assert np.allclose(y, z, rtol=1e-8, atol=1e-8)

    def test_implicit_matches_modal_oracle(self, heat8):
        # Backward Euler converges to the exact modal solution as tau -> 0.
        prob = problems.homogeneous(heat8)
        errs = []
        for tau in (0.01, 0.005):
            steps = round(0.1 / tau)
            traj = schemes.run(prob, None, SchemeConfig("implicit_scalar", tau=tau, steps=steps))
            errs.append(np.linalg.norm(traj.ys[-1] - problems.modal_exact(prob, 0.1)))
        assert errs[1] < 0.6 * errs[0]

    def test_kernel_shift_invisible_after_reconstruction(self, heat8, families8):
        # Overlapping runs may pick different component representatives, but
        # the reconstructed trajectory is what the monitors and users see.
        prob = problems.manufactured(heat8)
        fam = families8["overlap_p3"]
        cfg = SchemeConfig("implicit_vector", tau=0.02, steps=10)
        traj = schemes.run(prob, fam, cfg)
        for w, y in zip(traj.states, traj.ys):
            v = BlockVector.from_flat(fam.dims, w)
            assert np.allclose(dec.reconstruct(fam, v), y, atol=1e-12)


class TestCertificates:
    def test_d_operator_zero_at_p1_thresholds(self, heat8):
        fam = _trivial(8)
        ops = assembly.assemble_all(fam, heat8)
        val = schemes.check_D_operator(
            ops["C"], ops["C0"], ops["B"], ops["B0"], tau=0.1, mu=0.5, sigma=0.25
        )
        assert abs(val) < 1e-9

    def test_d_operator_nonnegative_at_thresholds(self, heat8, families8):
        for name in ("directsum_p2", "overlap_p2", "overlap_p3"):
            fam = families8[name]
            ops = assembly.assemble_all(fam, heat8)
            val = schemes.check_D_operator(
                ops["C"], ops["C0"], ops["B"], ops["B0"],
                tau=0.1, mu=fam.p / 2.0, sigma=fam.p / 4.0,
            )
            assert val >= -1e-9, name

    def test_d_operator_negative_below_threshold(self, heat8, families8):
        fam = families8["overlap_p2"]
        ops = assembly.assemble_all(fam, heat8)
        val = schemes.check_D_operator(
            ops["C"], ops["C0"], ops["B"], ops["B0"], tau=0.1, mu=0.2, sigma=0.1
        )
        assert val < -1e-6

    def test_two_level_certificate_sign(self, heat8, families8):
        fam = families8["directsum_p2"]
        ops = assembly.assemble_all(fam, heat8)
        assert schemes.two_level_certificate(ops["B"], ops["B0"], fam.p / 2.0) >= -1e-9
        assert schemes.two_level_certificate(ops["B"], ops["B0"], 0.1) < -1e-3

    def test_factorized_certificate_sign(self, heat8, families8):
        fam = families8["directsum_p4"]
        ops = assembly.assemble_all(fam, heat8)
        # sigma = 1/2: G = (tau/4) B1 B2 with B2 = B1^T, hence PSD.
        assert schemes.factorized_certificate(ops["B"], ops["B1"], ops["B2"], 0.01, 0.5) >= -1e-9
        assert schemes.factorized_certificate(ops["B"], ops["B1"], ops["B2"], 1e-6, 0.4) < -1e-3


class TestEnergyMonitor:
    def test_homogeneous_implicit_monotone(self, heat8):
        prob = problems.homogeneous(heat8)
        traj = schemes.run(prob, None, SchemeConfig("implicit_scalar", tau=0.05, steps=40))
        energies = [r.a_energy for r in traj.records]
        assert all(b <= a * (1.0 + 1e-12) for a, b in zip(energies, energies[1:]))
        assert all(r.bound_ok for r in traj.records)

    def test_forcing_sum_accumulation(self, heat8):
        prob = problems.manufactured(heat8)
        tau, steps = 0.01, 10
        traj = schemes.run(prob, None, SchemeConfig("implicit_scalar", tau=tau, steps=steps))
        acc = 0.0
        for n, r in enumerate(traj.records):
            if n > 0:
                f = prob.forcing((n - 1) * tau)
                acc += 0.5 * tau * float(f @ f)
            assert r.forcing_sum == pytest.approx(acc, rel=1e-12, abs=1e-15)
            assert r.bound == pytest.approx(traj.records[0].a_energy + acc, rel=1e-12)

    def test_three_level_records_energy_decay(self, heat8, families8):
        prob = problems.homogeneous(heat8)
        fam = families8["overlap_p2"]
        cfg = SchemeConfig(
            "three_level_split", tau=0.05, steps=60, mu=fam.p / 2.0, sigma=fam.p / 4.0
        )
        traj = schemes.run(prob, fam, cfg)
        assert all(r.bound_ok for r in traj.records)
        assert all(r.decay_ok for r in traj.records)
        series = [r.three_level_energy for r in traj.records]
        assert all(b <= a * (1.0 + 1e-9) + 1e-9 for a, b in zip(series, series[1:]))

    def test_unstable_negative_control_flagged(self, heat8, families8):
        prob = problems.manufactured(heat8)
        lam = linops.max_eigenvalue(heat8)
        cfg = SchemeConfig("two_level_directsum", tau=1e4 / lam, steps=120, sigma=0.0)
        with np.errstate(over="ignore", invalid="ignore"), pytest.warns(UserWarning):
            traj = schemes.run(prob, families8["directsum_p2"], cfg)
        assert any(not r.bound_ok for r in traj.records)


class TestAmplification:
    def test_implicit_scalar_single_mode(self):
        a = linops.SymmetricOperator(np.array([[1.0]]))
        cfg = SchemeConfig("implicit_scalar", tau=1.0, steps=1)
        m = schemes.amplification_matrix(a, None, cfg)
        assert m.shape == (1, 1)
        assert m[0, 0] == pytest.approx(0.5, rel=1e-14)

    def test_two_level_radius_below_one(self, heat8, families8):
        fam = families8["directsum_p2"]
        lam = linops.max_eigenvalue(heat8)
        cfg = SchemeConfig("two_level_directsum", tau=100.0 / lam, steps=1, sigma=fam.p / 2.0)
        m = schemes.amplification_matrix(heat8, fam, cfg)
        assert linops.spectral_radius(m) <= 1.0 + 1e-10

    def test_three_level_stacked_structure(self, heat8, families8):
        fam = families8["directsum_p2"]
        cfg = SchemeConfig("three_level_directsum", tau=0.1, steps=1, sigma=0.5)
        m = schemes.amplification_matrix(heat8, fam, cfg)
        s = sum(fam.dims)
        assert m.shape == (2 * s, 2 * s)
        assert np.array_equal(m[s:, :s], np.eye(s))
        assert np.array_equal(m[s:, s:], np.zeros((s, s)))

    def test_matches_run_iteration(self, heat8, families8):
        # Powers of the amplification matrix reproduce the homogeneous run.
        fam = families8["directsum_p2"]
        cfg = SchemeConfig("two_level_directsum", tau=0.03, steps=5, sigma=1.0)
        prob = problems.homogeneous(heat8)
        traj = schemes.run(prob, fam, cfg)
        m = schemes.amplification_matrix(heat8, fam, cfg)
        w = traj.states[0]
        for state in traj.states[1:]:
            w = m @ w
            assert np.allclose(w, state, rtol=1e-11, atol=1e-12)

    def test_oracle_cap(self, heat8, families8):
        cfg = SchemeConfig("implicit_vector", tau=0.1, steps=1)
        with pytest.raises(linops.OracleScaleError):
            schemes.amplification_matrix(heat8, families8["directsum_p2"], cfg, cap=4)
