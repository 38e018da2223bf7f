import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpfusion.core import (
    FusionModel,
    fused_score,
    hinge_objective,
    hinge_subgradient,
    least_squares_gradient,
    least_squares_objective,
    lp_norm,
    predict,
)
from lpfusion.normalize import TwoSidedMinMaxState

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def problems(max_n=8, max_r=4):
    return st.integers(1, max_r).flatmap(
        lambda r: st.tuples(
            arrays(np.float64, st.tuples(st.integers(1, max_n), st.just(r)), elements=st.floats(0, 1)),
            arrays(np.float64, r, elements=finite),
            arrays(np.float64, r, elements=finite),
            st.randoms(use_true_random=False),
        )
    ).map(lambda t: (t[0], np.array([t[3].choice([1.0, -1.0]) for _ in range(t[0].shape[0])]), t[1], t[2]))


class TestFusedScore:
    @pytest.mark.parametrize("s, w, expected", [
        ([1, 1], [0, 0], 0.0),
        ([2, 0], [0.5, 0.5], 1.0),
        ([1, 2, 3], [1, 0, 0], 1.0),
    ])
    def test_examples(self, s, w, expected):
        assert fused_score(s, w) == expected

    def test_dimension_mismatch_names_both_sizes(self):
        with pytest.raises(ValueError, match="expected R=2.*got 3"):
            fused_score([1, 2, 3], FusionModel(weights=[0.5, 0.5], p=2))

    @given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite), finite, finite)
    def test_linearity(self, s1, s2, a, b):
        w = np.array([0.3, -0.2, 0.5])
        lhs = fused_score(a * s1 + b * s2, w)
        rhs = a * fused_score(s1, w) + b * fused_score(s2, w)
        assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)) * 100)


class TestHinge:
    def test_examples(self):
        assert hinge_objective([[1, 1]], [1], [1, 0]) == 0.0
        assert hinge_objective([[1, 1]], [1], [0, 0]) == 1.0
        assert hinge_objective([[2, 0], [0, 2]], [1, -1], [0.5, 0.5]) == 2.0

    def test_subgradient_examples(self):
        np.testing.assert_array_equal(hinge_subgradient([[1, 2]], [1], [0, 0]), [-1, -2])
        np.testing.assert_array_equal(hinge_subgradient([[1, 0]], [-1], [0, 0]), [1, 0])
        np.testing.assert_array_equal(hinge_subgradient([[3, 3], [2, 2]], [1, 1], [1, 1]), [0, 0])

    def test_sample_on_margin_contributes_nothing(self):
        np.testing.assert_array_equal(hinge_subgradient([[1, 1]], [1], [1, 0]), [0, 0])

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            hinge_objective([[1, 1]], [1, 1], [0, 0])
        with pytest.raises(ValueError):
            hinge_objective([[np.nan, 1]], [1], [0, 0])
        with pytest.raises(ValueError):
            hinge_objective([[1, 1]], [0.5], [0, 0])

    @given(problems())
    def test_nonnegative(self, prob):
        S, y, w, _ = prob
        assert hinge_objective(S, y, w) >= 0.0

    @given(problems(), st.floats(0, 1))
    def test_convex_along_segments(self, prob, lam):
        S, y, a, b = prob
        f = lambda w: hinge_objective(S, y, w)
        assert f(lam * a + (1 - lam) * b) <= lam * f(a) + (1 - lam) * f(b) + 1e-9

    @given(problems())
    def test_subgradient_inequality(self, prob):
        S, y, w, w2 = prob
        g = hinge_subgradient(S, y, w)
        assert hinge_objective(S, y, w2) >= hinge_objective(S, y, w) + g @ (w2 - w) - 1e-9


class TestLeastSquares:
    def test_examples(self):
        assert least_squares_objective([[1, 1]], [1], [1, 0]) == 0.0
        assert least_squares_objective([[1, 1]], [1], [0, 0]) == 1.0
        assert least_squares_objective([[2, 0]], [-1], [0.5, 0.5]) == 4.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        S, y, w = rng.uniform(size=(6, 3)), np.array([1, -1, 1, 1, -1, 1.0]), rng.normal(size=3)
        g = least_squares_gradient(S, y, w)
        h = 1e-6
        fd = [(least_squares_objective(S, y, w + h * e) - least_squares_objective(S, y, w - h * e)) / (2 * h)
              for e in np.eye(3)]
        np.testing.assert_allclose(g, fd, rtol=1e-6)


class TestFusionModel:
    def test_predict_examples(self):
        m = FusionModel(weights=[0.5, 0.5], p=2)
        assert predict([1.5, 1.5], m) == 1
        assert predict([0.2, 0.2], m) == -1
        assert predict([1.0, 1.0], m) == -1  # ties at the threshold are anomalies

    def test_predict_applies_orientation_then_normalization(self):
        st_ = (TwoSidedMinMaxState(-10.0, 0.0, 5, clip=True),) * 2
        m = FusionModel(weights=[0.7, 0.7], p=2, threshold=0.5, orientation=[-1, -1], normalizers=st_)
        # raw novelty 1 -> oriented -1 -> normalized 0.9
        assert m.decision_function([1.0, 1.0]) == pytest.approx(1.26)
        assert predict([1.0, 1.0], m) == 1
        assert predict([9.0, 9.0], m) == -1

    @given(st.floats(0.1, 1.0), st.floats(0.1, 1.0))
    def test_predict_invariant_under_sign_preserving_weight_change(self, a, b):
        s = np.array([2.0, 1.0])
        m1 = FusionModel(weights=[a / 2, b / 2], p=np.inf, threshold=0.0)
        m2 = FusionModel(weights=[a, b], p=np.inf, threshold=0.0)
        assert predict(s, m1) == predict(s, m2) == 1
        assert predict(-s, m1) == predict(-s, m2) == -1

    def test_rejects_infeasible_or_bad_fields(self):
        with pytest.raises(ValueError, match="violate"):
            FusionModel(weights=[1, 1], p=2)
        with pytest.raises(ValueError):
            FusionModel(weights=[0.5], p=2, threshold=np.inf)
        with pytest.raises(ValueError):
            FusionModel(weights=[0.5], p=2, orientation=[0.5])
        with pytest.raises(ValueError):
            FusionModel(weights=[0.5], p=0.5)

    def test_is_immutable(self):
        m = FusionModel(weights=[0.5, 0.5], p=2)
        with pytest.raises(ValueError):
            m.weights[0] = 1.0

    def test_lp_norm(self):
        assert lp_norm([3, -4], 2) == pytest.approx(5.0)
        assert lp_norm([3, -4], 1) == 7.0
        assert lp_norm([3, -4], np.inf) == 4.0
        assert lp_norm([1e200, 1e200], 100) == pytest.approx(1e200 * 2 ** 0.01)
