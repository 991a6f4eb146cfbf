import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import thermalsim.born_emergence as be
from thermalsim.born_emergence import (
    EnvironmentTrajectoryModel,
    ModelInconsistentError,
    Outcome,
    OutcomeTally,
    PointerTrajectory,
    SmallUniverse,
    born_statistics,
    classify_outcome,
    direct_pointer_expectation,
    factored_pointer_expectation,
    plus_frequency_interval,
    pointer_expectation,
    pointer_trajectory,
    reduced_pointer_matrix,
    sample_environment,
    small_universe_diagnostics,
    validate_qubit,
)
from thermalsim.quantum_core import DensityOperator, DimensionError, HermitianOperator, ValidationError, q_expectation

MODEL = EnvironmentTrajectoryModel()


def flat_traj(values):
    v = np.asarray(values, dtype=float)
    return PointerTrajectory(np.arange(v.size, dtype=float), v, np.zeros(v.size), np.zeros(v.size, dtype=complex))


class TestQubit:
    def test_pure_up(self):
        q = validate_qubit(1, 0)
        assert np.array_equal(q.density.matrix, [[1, 0], [0, 0]])

    def test_boundary_coherence(self):
        q = validate_qubit(0.5, 0.5)
        assert np.linalg.eigvalsh(q.density.matrix)[0] == pytest.approx(0.0, abs=1e-15)

    def test_excess_coherence(self):
        with pytest.raises(ValidationError) as exc:
            validate_qubit(0.5, 0.6)
        assert exc.value.margin == pytest.approx(0.1)

    def test_p_range(self):
        with pytest.raises(ValidationError):
            validate_qubit(1.2, 0)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 2 * np.pi))
    def test_valid_states_are_density_operators(self, p, r, phase):
        a = r * np.sqrt(p * (1 - p)) * np.exp(1j * phase)
        DensityOperator(validate_qubit(p, a).density.matrix)


class TestEnvironment:
    def test_noiseless_u_hat_constant(self):
        m = EnvironmentTrajectoryModel(noise_scale=0.0, coherence_scale=0.0)
        s = sample_environment(m, 3)
        assert np.allclose(s.x / (s.x - s.y), s.u, atol=1e-15, rtol=0)
        assert np.all(s.z == 0)

    def test_signs_and_coherence_bound(self):
        g, eta, gamma, zeta, T = 1.0, 0.25, 0.1, 1.0, 20.0
        m = EnvironmentTrajectoryModel(g, eta, gamma, zeta, T, 50)
        for seed in range(200):
            s = sample_environment(m, seed)
            assert np.all(s.x > 0) and np.all(s.y < 0)
            # |xi3 + i xi4| <= 3*sqrt(2) once each component is clipped at 3
            bound = zeta * np.exp(-gamma * T) * 3 * np.sqrt(2) / (s.u * g * T * (1 - 3 * eta))
            assert abs(s.z[-1] / s.x[-1]) < bound

    def test_deterministic(self):
        a, b = sample_environment(MODEL, 11), sample_environment(MODEL, 11)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z) and a.u == b.u
        assert not np.array_equal(a.x, sample_environment(MODEL, 12).x)

    def test_inconsistent_noise(self):
        with pytest.raises(ModelInconsistentError):
            sample_environment(EnvironmentTrajectoryModel(noise_scale=2.0, noise_decay=1e-6), 0)

    def test_u_hat_converges(self):
        s = sample_environment(MODEL, 5)
        u_hat = s.x / (s.x - s.y)
        assert abs(u_hat[-1] - s.u) < 1e-6
        assert abs(u_hat[-1] - s.u) < abs(u_hat[0] - s.u) or abs(u_hat[0] - s.u) < 1e-6

    def test_decoherence_median_decreases(self):
        medians = []
        for T in (20.0, 40.0, 80.0):
            m = EnvironmentTrajectoryModel(horizon=T, n_steps=20)
            ratios = [abs(s.z[-1] / s.x[-1]) for s in (sample_environment(m, k) for k in range(400))]
            medians.append(np.median(ratios))
        assert medians[0] > medians[1] > medians[2]

    def test_model_validation(self):
        with pytest.raises(ValidationError):
            EnvironmentTrajectoryModel(n_steps=1)


class TestPointer:
    def test_reads_off_entries(self):
        assert pointer_expectation(validate_qubit(1, 0), 3.0, -2.0, 1 + 1j) == 3.0
        assert pointer_expectation(validate_qubit(0, 0), 3.0, -2.0, 1 + 1j) == -2.0

    @settings(max_examples=200)
    @given(
        p=st.floats(0, 1),
        r=st.floats(0, 1),
        phase=st.floats(0, 2 * np.pi),
        x=st.floats(0.1, 100),
        y=st.floats(-100, -0.1),
        zr=st.floats(-10, 10),
        zi=st.floats(-10, 10),
    )
    def test_factored_form(self, p, r, phase, x, y, zr, zi):
        q = validate_qubit(p, r * np.sqrt(p * (1 - p)) * np.exp(1j * phase))
        z = complex(zr, zi)
        assert factored_pointer_expectation(q, x, y, z) == pytest.approx(pointer_expectation(q, x, y, z), abs=1e-9)

    def test_classification(self):
        assert classify_outcome(flat_traj([10, 10]), 1.0) is Outcome.PLUS
        assert classify_outcome(flat_traj([3, -5]), 1.0) is Outcome.MINUS
        assert classify_outcome(flat_traj([3, 0.2]), 1.0) is Outcome.UNDECIDED
        with pytest.raises(ValueError):
            classify_outcome(flat_traj([1]), 0.0)


class TestBornStatistics:
    def test_certain_outcomes(self):
        # runs with u close to 0 (or 1) may still sit inside the threshold band
        up = born_statistics(validate_qubit(1, 0), MODEL, 500, 1.0, 0)
        assert up.n_minus == 0 and up.n_plus == up.n_decided and up.undecided_fraction <= 0.05
        down = born_statistics(validate_qubit(0, 0), MODEL, 500, 1.0, 0)
        assert down.n_plus == 0 and down.n_minus == down.n_decided and down.undecided_fraction <= 0.05

    def test_half(self):
        t = born_statistics(validate_qubit(0.5, 0), MODEL, 10_000, 1.0, 1)
        assert abs(t.n_plus / t.n_total - 0.5) <= 0.015

    def test_coherent_state(self):
        t = born_statistics(validate_qubit(0.2, 0.35), MODEL, 10_000, 1.0, 2)
        assert abs(t.n_plus / t.n_total - 0.2) <= 0.012

    def test_worker_independence(self):
        q = validate_qubit(0.3, 0.2)
        a = born_statistics(q, MODEL, 300, 1.0, 9, workers=1)
        b = born_statistics(q, MODEL, 300, 1.0, 9, workers=4)
        assert (a.n_plus, a.n_minus, a.n_undecided) == (b.n_plus, b.n_minus, b.n_undecided)
        assert np.array_equal(a.final_u, b.final_u)
        assert np.allclose(a.mean_pointer_matrix, b.mean_pointer_matrix, atol=1e-9)

    def test_uniformity_diagnostic(self):
        t = born_statistics(validate_qubit(0.5, 0), MODEL, 2000, 1.0, 4)
        assert stats.kstest(t.final_u, "uniform").pvalue > 0.01
        assert t.u_ks_statistic == pytest.approx(stats.kstest(t.final_u, "uniform").statistic)

    def test_undecided_warning(self):
        t = born_statistics(validate_qubit(0.5, 0), MODEL, 200, 1e6, 0)
        assert t.n_undecided == 200 and t.warnings

    def test_alpha_changes_few_classifications(self):
        p = 0.4
        amax = np.sqrt(p * (1 - p))
        q0, q1 = validate_qubit(p, 0), validate_qubit(p, 0.9 * amax)
        changed = near = 0
        n = 2000
        for run in range(n):
            s = sample_environment(MODEL, (7, run))
            o0 = classify_outcome(pointer_trajectory(q0, s.times, s.x, s.y, s.z), 1.0)
            tr1 = pointer_trajectory(q1, s.times, s.x, s.y, s.z)
            changed += o0 is not classify_outcome(tr1, 1.0)
            near += abs(tr1.xbar[-1]) < 2 * 2 * amax * abs(s.z[-1])
        assert changed <= near
        assert near / n < 0.01

    def test_merge_is_additive(self):
        a = OutcomeTally(1, 2, 3, np.array([0.1]), np.eye(2, dtype=complex))
        b = OutcomeTally(4, 5, 6, np.array([0.2, 0.3]), np.zeros((2, 2), dtype=complex))
        m = a.merge(b)
        assert (m.n_plus, m.n_minus, m.n_undecided, m.n_total) == (5, 7, 9, 21)
        assert np.allclose(m.mean_pointer_matrix, np.eye(2) * 6 / 21)

    def test_json_keys(self):
        q = validate_qubit(0.5, 0.1 + 0.2j)
        doc = born_statistics(q, MODEL, 50, 1.0, 0).to_json(q)
        for key in ("p", "alpha_re", "alpha_im", "n_plus", "n_minus", "n_undecided", "u_ks_statistic"):
            assert key in doc
        assert doc["alpha_im"] == 0.2

    def test_interval_covers_mean(self):
        lo, hi = plus_frequency_interval(0.5, 10_000)
        assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.015, abs=0.001)
        assert plus_frequency_interval(1.0, 100) == (1.0, 1.0)


class TestSmallUniverse:
    def test_time_zero(self):
        u = SmallUniverse.random(dim_env=4, seed=1)
        XS = reduced_pointer_matrix(u, 0.0).matrix
        mean = q_expectation(u.rho_env, u.X_env)
        assert np.allclose(XS, mean * np.eye(2), atol=1e-12)

    def test_decoupled(self):
        base = SmallUniverse.random(dim_env=4, seed=2)
        u = SmallUniverse.decoupled(HermitianOperator([[0.3, 1.0], [1.0, -0.4]]), base.rho_env, base.X_env)
        mean = q_expectation(u.rho_env, u.X_env)
        s = small_universe_diagnostics(u, [0.5, 1.7, 3.0])
        assert np.allclose(s.z, 0, atol=1e-12)
        assert np.allclose(s.x, mean, atol=1e-12) and np.allclose(s.y, mean, atol=1e-12)

    def test_consistency_with_full_universe(self):
        rng = np.random.default_rng(0)
        u = SmallUniverse.random(dim_env=8, seed=3)
        for t in rng.uniform(0, 10, 5):
            XS = reduced_pointer_matrix(u, t)
            assert np.allclose(XS.matrix, XS.matrix.conj().T, atol=1e-10)
            q = validate_qubit(0.3, 0.2 - 0.3j)
            assert q_expectation(q.density, XS) == pytest.approx(direct_pointer_expectation(u, q, t), abs=1e-9)

    def test_diagnostics_feed_pointer_formula(self):
        u = SmallUniverse.random(dim_env=8, seed=4)
        t = np.linspace(0.5, 4, 4)
        s = small_universe_diagnostics(u, t)
        q = validate_qubit(0.7, 0.3 + 0.1j)
        traj = pointer_trajectory(q, s.times, s.x, s.y, s.z)
        direct = [direct_pointer_expectation(u, q, ti) for ti in t]
        assert np.allclose(traj.xbar, direct, atol=1e-9)

    def test_paths_share_pointer_code(self, monkeypatch):
        XS = np.array([[2.0, 0.5 - 0.25j], [0.5 + 0.25j, -1.0]])
        monkeypatch.setattr(be, "reduced_pointer_matrix", lambda universe, t: HermitianOperator(XS))
        s = small_universe_diagnostics(SmallUniverse.random(dim_env=2, seed=0), [1.0, 2.0])
        q = validate_qubit(0.6, 0.2j)
        via_universe = pointer_trajectory(q, s.times, s.x, s.y, s.z).xbar
        via_stochastic = pointer_expectation(q, XS[0, 0].real, XS[1, 1].real, XS[0, 1])
        assert np.array_equal(via_universe, [via_stochastic] * 2)

    def test_dimension_checks(self):
        u = SmallUniverse.random(dim_env=3, seed=0)
        with pytest.raises(DimensionError):
            SmallUniverse(4, u.H_universe, u.rho_env, u.X_env)
