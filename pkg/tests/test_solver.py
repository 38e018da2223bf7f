import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpfusion.core import hinge_objective, lp_norm
from lpfusion.solver import (
    P_GRID,
    SolverConfig,
    duality_gap,
    frank_wolfe,
    fw_solve,
    initial_weights,
    lmo_lp_ball,
    sampling_oracle,
    step_size,
)

ALL_P = (1.0,) + P_GRID + (np.inf,)


def random_feasible(rng, n, R, p):
    X = rng.uniform(-1, 1, size=(n, R))
    norms = np.array([lp_norm(x, p) for x in X])
    return X / np.maximum(norms, 1.0)[:, None] * rng.uniform(0, 1, size=(n, 1))


class TestLmo:
    def test_examples(self):
        np.testing.assert_allclose(lmo_lp_ball([-3, 4], 2), [0.6, -0.8], atol=1e-15)
        np.testing.assert_array_equal(lmo_lp_ball([-3, 4], 1), [0, -1])
        np.testing.assert_array_equal(lmo_lp_ball([-3, 4], np.inf), [1, -1])

    def test_zero_gradient_is_stationary_signal(self):
        assert lmo_lp_ball([0.0, 0.0], 2) is None

    def test_errors(self):
        with pytest.raises(ValueError):
            lmo_lp_ball([np.nan, 1.0], 2)
        with pytest.raises(ValueError):
            lmo_lp_ball([1.0, 1.0], 0.5)

    def test_p1_ties_take_first_index(self):
        np.testing.assert_array_equal(lmo_lp_ball([2, -2, 1], 1), [-1, 0, 0])

    def test_pinf_maps_zero_entries_to_zero(self):
        np.testing.assert_array_equal(lmo_lp_ball([2, 0, -1], np.inf), [-1, 0, 1])

    def test_no_overflow_for_steep_exponent(self):
        z = lmo_lp_ball([1e300, 1e299, -1e-300], 32 / 31)
        assert np.all(np.isfinite(z))
        assert lp_norm(z, 32 / 31) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("p", ALL_P)
    @given(g=arrays(np.float64, st.integers(1, 6), elements=st.floats(-1e3, 1e3)))
    def test_feasible_on_boundary(self, p, g):
        z = lmo_lp_ball(g, p)
        if not np.any(g):
            assert z is None
            return
        assert lp_norm(z, p) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("p", ALL_P)
    def test_optimal_against_random_feasible_points(self, p):
        rng = np.random.default_rng(7)
        for _ in range(5):
            g = rng.normal(size=4)
            z = lmo_lp_ball(g, p)
            X = random_feasible(rng, 20000, 4, p)
            assert z @ g <= (X @ g).min() + 1e-9

    def test_p2_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            g = rng.normal(size=5)
            np.testing.assert_allclose(lmo_lp_ball(g, 2), -g / np.linalg.norm(g), atol=1e-12)

    def test_near_one_agrees_with_p1_support(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            g = rng.uniform(-1, 1, size=4)
            k = int(np.argmax(np.abs(g)))
            g[k] = 2.5 * np.sign(g[k] or 1.0) * np.sort(np.abs(g))[-2] + np.sign(g[k]) * 1e-3
            z_near, z_one = lmo_lp_ball(g, 32 / 31), lmo_lp_ball(g, 1)
            assert int(np.argmax(np.abs(z_near))) == int(np.argmax(np.abs(z_one)))
            assert np.sign(z_near[k]) == np.sign(z_one[k])


class TestDualityGap:
    def test_examples(self):
        assert duality_gap([0.6, -0.8], [0.6, -0.8], [-3, 4]) == 0.0
        assert duality_gap([0, 0], [0.6, -0.8], [-3, 4]) == pytest.approx(5.0)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            duality_gap([0, 0], [1, 0, 0], [1, 1])


class TestFwSolve:
    def test_step_and_init(self):
        assert step_size(1) == 2 / 3
        np.testing.assert_allclose(initial_weights(4, 2), 0.5)
        np.testing.assert_array_equal(initial_weights(3, np.inf), 1.0)
        for p in ALL_P:
            assert lp_norm(initial_weights(3, p), p) == pytest.approx(1.0, abs=1e-12)

    def test_zero_loss_start_stops_immediately(self):
        S = np.full((5, 2), 3.0)
        w, trace = fw_solve(S, np.ones(5), SolverConfig(p=2))
        np.testing.assert_array_equal(w, initial_weights(2, 2))
        assert trace.reason == "zero-subgradient"
        assert len(trace) == 1 and trace.records[0].t == 1

    def test_single_useful_classifier_under_l1(self):
        S = np.tile([1.0, 0.0], (20, 1))
        w, _ = fw_solve(S, np.ones(20), SolverConfig(p=1, max_iters=2000))
        np.testing.assert_allclose(w, [1.0, 0.0], atol=2e-3)

    def test_symmetric_data_keeps_uniform_weights_under_linf(self):
        S = np.tile([0.2, 0.2], (10, 1))
        w, _ = fw_solve(S, np.ones(10), SolverConfig(p=np.inf, max_iters=50))
        np.testing.assert_array_equal(w, [1.0, 1.0])

    def test_trace_contract(self):
        rng = np.random.default_rng(0)
        S, y = rng.uniform(size=(30, 3)), np.where(rng.uniform(size=30) < 0.6, 1.0, -1.0)
        w, trace = fw_solve(S, y, SolverConfig(p=4 / 3, max_iters=300, gap_tol=0), keep_iterates=True)
        arr = trace.as_array()
        assert len(trace) <= 300
        np.testing.assert_array_equal(arr[:, 3], 2.0 / (2.0 + arr[:, 0]))
        np.testing.assert_array_equal(arr[:, 0], np.arange(1, len(trace) + 1))
        assert np.all(arr[:, 2] >= -1e-9)
        assert all(lp_norm(x, 4 / 3) <= 1 + 1e-9 for x in trace.iterates)
        assert trace.final_objective == hinge_objective(S, y, w)

    def test_gap_stop(self):
        rng = np.random.default_rng(1)
        S, y = rng.uniform(size=(30, 2)), np.ones(30)
        _, trace = fw_solve(S, y, SolverConfig(p=2, max_iters=5000, gap_tol=0.5))
        assert trace.reason in ("gap", "zero-subgradient")
        assert trace.records[-1].gap <= 0.5

    def test_precision_stop(self):
        rng = np.random.default_rng(2)
        S, y = rng.uniform(size=(30, 2)), np.where(rng.uniform(size=30) < 0.5, 1.0, -1.0)
        _, trace = fw_solve(S, y, SolverConfig(p=2, max_iters=100000, gap_tol=0, precision_tol=1e-3))
        assert trace.reason == "precision"
        assert len(trace) < 100000

    def test_unsmoothed_search_is_available(self):
        rng = np.random.default_rng(3)
        S, y = rng.uniform(size=(20, 2)), np.where(rng.uniform(size=20) < 0.5, 1.0, -1.0)
        w, trace = fw_solve(S, y, SolverConfig(p=2, max_iters=200, smoothing=0.0))
        assert lp_norm(w, 2) <= 1 + 1e-9
        f_best = sampling_oracle(S, y, 2, budget=10**5)[1]
        assert trace.final_objective - f_best <= trace.final_gap + 1e-6

    def test_least_squares_loss(self):
        rng = np.random.default_rng(4)
        S, y = rng.uniform(size=(20, 2)), np.where(rng.uniform(size=20) < 0.5, 1.0, -1.0)
        w, trace = fw_solve(S, y, SolverConfig(p=2, max_iters=3000, loss="least_squares", gap_tol=0))
        f_best = sampling_oracle(S, y, 2, budget=10**5, loss="least_squares")[1]
        assert trace.final_objective <= f_best + 1e-3

    def test_config_validation(self):
        for bad in ({"p": 0.9}, {"max_iters": 0}, {"gap_tol": -1}, {"precision_tol": -1}, {"loss": "l1"}):
            with pytest.raises(ValueError):
                SolverConfig(**bad)

    def test_input_errors(self):
        with pytest.raises(ValueError):
            fw_solve(np.zeros((0, 2)), np.zeros(0))
        with pytest.raises(ValueError):
            fw_solve(np.ones((3, 2)), np.ones(2))

    @staticmethod
    def _gaps(seed):
        rng = np.random.default_rng(seed)
        S, y = rng.uniform(size=(40, 3)), np.where(rng.uniform(size=40) < 0.6, 1.0, -1.0)
        cfg = lambda T: SolverConfig(p=2, max_iters=T, gap_tol=0)
        return fw_solve(S, y, cfg(200))[1], fw_solve(S, y, cfg(2000))[1]

    def test_sublinear_gap_decay(self):
        t200, t2000 = self._gaps(0)
        assert t2000.final_gap <= t200.final_gap
        # C from the first 20 iterations under the envelope gap_t <= C / (t + 2)
        arr = t200.as_array()[:20]
        C = float(np.max(arr[:, 2] * (arr[:, 0] + 2)))
        assert t2000.final_gap <= 10 * C / 2002

    def test_longer_runs_do_not_loosen_the_certificate(self):
        for seed in range(20):
            t200, t2000 = self._gaps(seed)
            assert t2000.final_gap <= t200.final_gap + 1e-12

    def test_generic_loop_on_simplex(self):
        # minimize ||x - c||^2 over the probability simplex; c is interior
        c = np.array([0.2, 0.3, 0.5])

        def lmo(g):
            z = np.zeros_like(g)
            z[int(np.argmin(g))] = 1.0
            return z

        x, trace = frank_wolfe(lambda x: float(np.sum((x - c) ** 2)), lambda x: 2 * (x - c), lmo,
                               np.array([1.0, 0, 0]), max_iters=5000)
        np.testing.assert_allclose(x, c, atol=1e-2)
        assert trace.final_gap >= -1e-12


class TestSamplingOracle:
    def test_zero_floor(self):
        S = np.tile([2.0, 0.0], (5, 1))
        _, f = sampling_oracle(S, np.ones(5), 2, budget=10**4)
        assert f == 0.0

    def test_single_sample_instance(self):
        _, f = sampling_oracle([[2.0, 0.0]], [1.0], 2, budget=10**4)
        assert f <= 1e-2

    def test_monotone_in_budget_and_deterministic(self):
        rng = np.random.default_rng(0)
        S, y = rng.uniform(size=(10, 3)), np.where(rng.uniform(size=10) < 0.5, 1.0, -1.0)
        a = sampling_oracle(S, y, 4 / 3, budget=10**4, seed=3)
        b = sampling_oracle(S, y, 4 / 3, budget=10**6, seed=3)
        assert b[1] <= a[1]
        c = sampling_oracle(S, y, 4 / 3, budget=10**4, seed=3)
        assert a[1] == c[1] and np.array_equal(a[0], c[0])
        assert lp_norm(b[0], 4 / 3) <= 1 + 1e-9

    def test_rejects_large_r(self):
        with pytest.raises(ValueError, match="desk-scale"):
            sampling_oracle(np.ones((3, 5)), np.ones(3), 2)
