import numpy as np
import pytest

from dkfsim.model import (DimensionError, ModelError, RegularityWindow, SensorModel,
                          SystemModel, observe, simulate, simulate_batch, step_state,
                          validate_assumptions)
from dkfsim.scenarios import example1_A, example1_model, example1_sensors, example1_window


class TestStepState:
    def test_identity_zero_noise(self, rng):
        model = SystemModel(2, np.eye(2), np.zeros((2, 2)))
        np.testing.assert_array_equal(step_state(model, 0, [1.0, 2.0], rng), [1.0, 2.0])

    def test_example_matrix_at_peak_of_sine(self, rng):
        # k = 3: sin(k pi / 6) = 1
        model = SystemModel(2, example1_A, np.zeros((2, 2)))
        np.testing.assert_allclose(step_state(model, 3, [1.0, 0.0], rng), [1.1, 1.1], atol=1e-15)

    def test_noise_covariance_matches_Q(self):
        Q = np.diag([0.5, 0.7])
        model = SystemModel(2, np.eye(2), Q)
        rng = np.random.default_rng(0)
        T = 100_000
        x = np.array([0.3, -0.2])
        w = np.array([step_state(model, 0, x, rng) for _ in range(T)]) - x
        S = w.T @ w / T
        se = np.sqrt((np.outer(np.diag(Q), np.diag(Q)) + Q ** 2) / T)
        assert (np.abs(S - Q) <= 3 * se).all()

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            step_state(SystemModel(2, np.eye(2), np.eye(2)), 0, [1.0], rng)

    def test_q_not_pd(self, rng):
        with pytest.raises(ModelError):
            step_state(SystemModel(2, np.eye(2), -np.eye(2)), 0, [1.0, 0.0], rng)

    def test_beyond_horizon(self, rng):
        with pytest.raises(IndexError):
            step_state(SystemModel(2, np.eye(2), np.eye(2), horizon=5), 5, [1.0, 0.0], rng)


class TestObserve:
    def test_zero_row(self, rng):
        s = SensorModel(2, np.zeros((1, 2)), np.zeros((1, 1)))
        assert observe(s, 0, [3.0, -4.0], rng) == 0.0

    def test_sensor1_at_k6(self, rng):
        s = example1_sensors()[0]
        np.testing.assert_allclose(s.H(6), [[2.0, 0.0]], atol=1e-15)
        zero_noise = SensorModel(1, s.H, np.zeros((1, 1)))
        np.testing.assert_allclose(observe(zero_noise, 6, [0.7, 5.0], rng), [1.4])

    def test_noise_variance_matches_R(self):
        s = SensorModel(1, np.array([[1.0, 0.0]]), [[0.5]])
        rng = np.random.default_rng(1)
        T = 100_000
        x = np.array([1.0, 2.0])
        v = np.array([observe(s, 0, x, rng)[0] for _ in range(T)]) - 1.0
        assert abs(v @ v / T - 0.5) <= 3 * np.sqrt(2) * 0.5 / np.sqrt(T)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            observe(SensorModel(1, np.ones((1, 3)), [[1.0]]), 0, [1.0, 2.0], rng)


class TestSimulate:
    def test_empty_horizon(self):
        rec = simulate(example1_model(), example1_sensors(), 0, seed=3)
        assert rec.states.shape == (1, 2)
        assert [m.shape for m in rec.measurements] == [(1, 1)] * 4

    def test_deterministic(self):
        a = simulate(example1_model(), example1_sensors(), 30, seed=11)
        b = simulate(example1_model(), example1_sensors(), 30, seed=11)
        assert a.states.tobytes() == b.states.tobytes()
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.measurements, b.measurements))

    def test_trials_independent_of_batching(self):
        X, Y = simulate_batch(example1_model(), example1_sensors(), 20, seed=5, trials=6)
        rec = simulate(example1_model(), example1_sensors(), 20, seed=5, trial=4)
        np.testing.assert_allclose(rec.states, X[4], rtol=0, atol=1e-13)
        np.testing.assert_allclose(rec.measurements[2], Y[2][4], rtol=0, atol=1e-13)

    def test_initial_state_zero_mean(self):
        X, _ = simulate_batch(example1_model(), example1_sensors(), 0, seed=9, trials=500)
        x0 = X[:, 0]
        se = x0.std(axis=0, ddof=1) / np.sqrt(len(x0))
        assert (np.abs(x0.mean(axis=0)) <= 3 * se).all()

    def test_process_noise_is_white(self):
        Q = np.diag([0.5, 0.7])
        model = SystemModel(2, np.eye(2), Q)
        sensor = SensorModel(1, np.zeros((1, 2)), [[1.0]])
        T = 10_000
        X, _ = simulate_batch(model, [sensor], T, seed=21, trials=1)
        w = np.diff(X[0], axis=0) / np.sqrt(np.diag(Q))
        for lag in range(1, 6):
            corr = (w[lag:] * w[:-lag]).mean(axis=0)
            assert (np.abs(corr) <= 3 / np.sqrt(T - lag)).all()


class TestValidateAssumptions:
    def test_example1_passes_and_lists_singular_steps(self):
        model = example1_model(120)
        rep = validate_assumptions(model, example1_sensors(), example1_window(120))
        assert rep.passed
        # 0.11 sin(k pi / 6) = 0.055  <=>  k = 1, 5 (mod 12)
        expected = [k for k in range(121) if k % 12 in (1, 5)]
        assert rep.singular_steps == expected

    def test_constant_q_bounds(self):
        rep = validate_assumptions(example1_model(24), example1_sensors())
        assert rep.Q_bounds == (0.5, 0.7)
        assert rep.get("noise_Q_pd").passed

    def test_unbounded_A_fails_with_witness(self):
        model = SystemModel(2, lambda k: np.diag([k, k]), np.eye(2), beta1=100.0)
        rep = validate_assumptions(model, example1_sensors(), horizon=30)
        f = rep.get("A_bounded")
        assert not f.passed
        assert f.witness_k == 11

    def test_R_not_pd_is_hard_failure(self):
        sensors = [SensorModel(1, np.eye(2), np.zeros((2, 2)))]
        rep = validate_assumptions(SystemModel(2, np.eye(2), np.eye(2)), sensors, horizon=3)
        assert [f.name for f in rep.hard_failures] == ["noise_R_pd"]

    def test_singular_window_violation(self):
        window = RegularityWindow((0,), 3, 1e-3)
        rep = validate_assumptions(example1_model(12), example1_sensors(), window)
        f = rep.get("A_regular_window")
        assert not f.passed and f.witness_k == 1
