import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsmia.signals import (
    RSMAPE_EPS,
    IllPosedFitError,
    SignalError,
    SignalId,
    UndefinedMetricError,
    canonical_order,
    compute_signal_matrix,
    default_embedding,
    embedding_signal,
    mae,
    mse,
    nd,
    orient_values,
    rsmape,
    seasonality_signal,
    signal_vector,
    smape,
    trend_signal,
)

# ---------------------------------------------------------------- oracles


def naive_metrics(y, yhat):
    """Scalar error metrics computed with explicit loops."""
    h, m = y.shape[1], y.shape[0]
    se = ae = sm = num = den = 0.0
    for i in range(m):
        for j in range(h):
            d = y[i, j] - yhat[i, j]
            se += d * d
            ae += abs(d)
            denom = abs(y[i, j]) + abs(yhat[i, j])
            if denom > 0:
                sm += abs(d) / denom
            num += abs(d)
            den += abs(y[i, j])
    count = m * h
    return se / count, ae / count, sm / count, (num / den if den > 0 else None)


def naive_dft2(x):
    """Direct double-loop 2-D DFT over an (M, H) grid."""
    m, h = x.shape
    out = np.zeros((m, h), dtype=complex)
    for k1 in range(m):
        for k2 in range(h):
            acc = 0.0 + 0.0j
            for a in range(m):
                for b in range(h):
                    acc += x[a, b] * np.exp(-2j * np.pi * (k1 * a / m + k2 * b / h))
            out[k1, k2] = acc
    return out


def closed_form_line_fit(seq):
    """Degree-1 least squares over normalized time, via the textbook
    slope/intercept formulas."""
    h = len(seq)
    t = np.linspace(0.0, 1.0, h)
    tbar, ybar = t.mean(), seq.mean()
    slope = np.sum((t - tbar) * (seq - ybar)) / np.sum((t - tbar) ** 2)
    return ybar - slope * tbar, slope


# ---------------------------------------------------------------- tests


class TestErrorSignals:
    def test_perfect_prediction_zeroes(self, rng):
        y = rng.standard_normal((2, 5)) + 1.0
        assert mse(y, y) == 0.0
        assert mae(y, y) == 0.0
        assert smape(y, y) == 0.0
        assert nd(y, y) == 0.0

    def test_unit_error(self):
        y = np.array([[0.0, 0.0]])
        yhat = np.array([[1.0, 1.0]])
        assert mse(y, yhat) == 1.0
        assert mae(y, yhat) == 1.0

    def test_hand_computed(self):
        y = np.array([[1.0, 2.0]])
        yhat = np.array([[2.0, 4.0]])
        assert mse(y, yhat) == 2.5
        assert mae(y, yhat) == 1.5
        assert nd(y, yhat) == 1.0

    def test_smape_hand_computed(self):
        assert smape(np.array([[1.0, 3.0]]), np.array([[2.0, 3.0]])) == pytest.approx(
            1.0 / 6.0, abs=1e-15
        )

    def test_smape_sign_flip_is_one(self, rng):
        y = rng.standard_normal((3, 4)) + 2.0
        assert smape(y, -y) == pytest.approx(1.0, abs=1e-15)

    def test_nd_zero_prediction_is_one(self):
        y = np.array([[1.0, -2.0, 3.0]])
        assert nd(y, np.zeros_like(y)) == 1.0

    def test_nd_all_zero_target_errors(self):
        with pytest.raises(UndefinedMetricError):
            nd(np.zeros((1, 3)), np.ones((1, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(SignalError):
            mse(np.zeros((1, 2)), np.zeros((1, 3)))

    def test_oracle_agreement_random_instances(self, rng):
        for _ in range(100):
            m, h = rng.integers(1, 4), rng.integers(1, 6)
            y = rng.standard_normal((m, h))
            yhat = rng.standard_normal((m, h))
            o_mse, o_mae, o_smape, o_nd = naive_metrics(y, yhat)
            assert mse(y, yhat) == pytest.approx(o_mse, abs=1e-12)
            assert mae(y, yhat) == pytest.approx(o_mae, abs=1e-12)
            assert smape(y, yhat) == pytest.approx(o_smape, abs=1e-12)
            assert nd(y, yhat) == pytest.approx(o_nd, abs=1e-12)
            s = min(max(o_smape, RSMAPE_EPS), 1 - RSMAPE_EPS)
            assert rsmape(y, yhat) == pytest.approx(math.log(s / (1 - s)), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        c=st.floats(min_value=1e-3, max_value=1e3, allow_nan=False).map(lambda v: v),
        flip=st.booleans(),
    )
    def test_smape_scale_invariance(self, c, flip):
        rng = np.random.default_rng(99)
        y = rng.standard_normal((2, 3))
        yhat = rng.standard_normal((2, 3))
        scale = -c if flip else c
        assert smape(scale * y, scale * yhat) == pytest.approx(smape(y, yhat), rel=1e-9)


class TestRsmape:
    def test_logit_symmetry_at_half(self):
        # SMAPE = 0.5: one entry with ratio 1/1... use Y=1, Yhat=3 -> |d|/(1+3)=0.5
        assert rsmape(np.array([[1.0]]), np.array([[3.0]])) == pytest.approx(0.0, abs=1e-12)

    def test_clamp_floor(self):
        y = np.ones((1, 2))
        val = rsmape(y, y)  # smape 0 -> clamps to eps
        assert val == pytest.approx(math.log(RSMAPE_EPS / (1 - RSMAPE_EPS)), abs=1e-9)
        assert val == pytest.approx(-20.72, abs=0.01)

    def test_hand_computed(self):
        # SMAPE 0.75: Y=1, Yhat=-7/3 gives |d|/(|y|+|yh|) = (10/3)/(10/3+1)... build directly
        y = np.array([[1.0]])
        yhat = np.array([[-7.0]])  # |1-(-7)| / (1+7) = 1 -> not 0.75; use two terms
        y = np.array([[1.0, 1.0]])
        yhat = np.array([[-1.0, 3.0]])  # terms: 2/2=1, 2/4=0.5 -> smape 0.75
        assert rsmape(y, yhat) == pytest.approx(math.log(3.0), abs=1e-12)


class TestTrend:
    def test_perfect_match_zero(self, rng):
        y = rng.standard_normal((2, 6))
        assert trend_signal(y, y) == 0.0

    def test_linear_vs_zero_prediction(self):
        y = np.linspace(0.0, 1.0, 8).reshape(1, 8)  # slope 1, intercept 0 over [0,1]
        assert trend_signal(y, np.zeros_like(y), degree=1) == pytest.approx(1.0, abs=1e-10)

    def test_recovers_line_coefficients(self, rng):
        intercept, slope = -0.7, 2.3
        t = np.linspace(0.0, 1.0, 9)
        y = (intercept + slope * t).reshape(1, 9)
        got_i, got_s = closed_form_line_fit(y[0])
        assert got_i == pytest.approx(intercept, abs=1e-10)
        assert got_s == pytest.approx(slope, abs=1e-10)
        # distance to a zero prediction equals the coefficient norm
        assert trend_signal(y, np.zeros_like(y)) == pytest.approx(
            math.hypot(intercept, slope), abs=1e-10
        )

    def test_oracle_agreement_random(self, rng):
        for _ in range(100):
            h = int(rng.integers(2, 8))
            y = rng.standard_normal((1, h))
            yhat = rng.standard_normal((1, h))
            iy, sy = closed_form_line_fit(y[0])
            ip, sp = closed_form_line_fit(yhat[0])
            expect = math.hypot(iy - ip, sy - sp)
            assert trend_signal(y, yhat) == pytest.approx(expect, abs=1e-9)

    def test_ill_posed(self):
        with pytest.raises(IllPosedFitError):
            trend_signal(np.zeros((1, 2)), np.zeros((1, 2)), degree=2)


class TestSeasonality:
    def test_perfect_match_zero(self, rng):
        y = rng.standard_normal((2, 4))
        assert seasonality_signal(y, y) == 0.0

    def test_constant_matrices_dc_only(self):
        m, h = 2, 4
        y = np.full((m, h), 3.0)
        yhat = np.full((m, h), 1.0)
        assert seasonality_signal(y, yhat) == pytest.approx(m * h * 2.0, abs=1e-12)

    def test_naive_oracle_agreement(self, rng):
        for _ in range(100):
            m, h = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            y = rng.standard_normal((m, h))
            yhat = rng.standard_normal((m, h))
            expect = np.sqrt(
                np.sum((np.abs(naive_dft2(y)) - np.abs(naive_dft2(yhat))) ** 2)
            )
            assert seasonality_signal(y, yhat) == pytest.approx(expect, abs=1e-9)

    def test_parseval(self, rng):
        for _ in range(20):
            x = rng.standard_normal((3, 5))
            spectrum = naive_dft2(x)
            assert np.sum(x**2) == pytest.approx(
                np.sum(np.abs(spectrum) ** 2) / x.size, abs=1e-9
            )


class TestEmbedding:
    def test_perfect_match_zero_any_embedder(self, rng):
        y = rng.standard_normal((2, 4))
        assert embedding_signal(y, y) == 0.0
        assert embedding_signal(y, y, embedder=lambda a: a.ravel() ** 2) == 0.0

    def test_identity_flatten_equals_l2(self, rng):
        y = rng.standard_normal((2, 4))
        yhat = rng.standard_normal((2, 4))
        got = embedding_signal(y, yhat, embedder=lambda a: a.ravel())
        assert got == pytest.approx(np.linalg.norm(y - yhat), abs=1e-12)

    def test_default_embedder_hand_computed(self):
        y = np.array([[1.0, 2.0, 4.0, 7.0]])
        yhat = np.array([[1.0, 1.0, 1.0, 1.0]])
        stats_y = np.array([3.5, np.std([1, 2, 4, 7]), 2.0])  # mean, std, mean diff
        stats_p = np.array([1.0, 0.0, 0.0])
        assert embedding_signal(y, yhat) == pytest.approx(
            np.linalg.norm(stats_y - stats_p), abs=1e-12
        )

    def test_single_step_horizon_diff_is_zero(self):
        emb = default_embedding(np.array([[[2.0]]]))
        np.testing.assert_allclose(emb, [[2.0, 0.0, 0.0]])

    def test_dimension_mismatch(self, rng):
        y = rng.standard_normal((1, 4))

        def weird(a):
            return a.ravel()[: 2 if a[0, 0] > 0 else 3]

        with pytest.raises(SignalError):
            embedding_signal(np.abs(y) + 1.0, -np.abs(y) - 1.0, embedder=weird)


class TestSignalVector:
    def test_single_signal(self):
        y = np.ones((1, 2))
        np.testing.assert_array_equal(signal_vector(y, y, [SignalId.MSE]), [0.0])

    def test_canonical_order_fixed(self, rng):
        y = rng.standard_normal((1, 5))
        yhat = rng.standard_normal((1, 5))
        a = signal_vector(y, yhat, [SignalId.MSE, SignalId.TREND, SignalId.MAE])
        b = signal_vector(y, yhat, [SignalId.TREND, SignalId.MAE, SignalId.MSE])
        np.testing.assert_array_equal(a, b)
        assert canonical_order([SignalId.TREND, SignalId.MSE]) == (SignalId.MSE, SignalId.TREND)

    def test_full_set_matches_elementwise(self, rng):
        y = rng.standard_normal((2, 5)) + 3.0
        yhat = rng.standard_normal((2, 5))
        full = list(SignalId)
        vec = signal_vector(y, yhat, full)
        singles = [
            mse(y, yhat), mae(y, yhat), smape(y, yhat), rsmape(y, yhat), nd(y, yhat),
            trend_signal(y, yhat), seasonality_signal(y, yhat), embedding_signal(y, yhat),
        ]
        np.testing.assert_allclose(vec, singles, atol=1e-12)

    def test_batch_matrix_matches_vector(self, rng):
        y = rng.standard_normal((6, 2, 4)) + 2.0
        yhat = rng.standard_normal((6, 2, 4))
        matrix = compute_signal_matrix(y, yhat, [SignalId.MSE, SignalId.SEASONALITY])
        for i in range(6):
            np.testing.assert_allclose(
                matrix[i], signal_vector(y[i], yhat[i], [SignalId.MSE, SignalId.SEASONALITY]),
                atol=1e-12,
            )

    def test_duplicate_signals_rejected(self):
        with pytest.raises(SignalError):
            signal_vector(np.ones((1, 2)), np.ones((1, 2)), [SignalId.MSE, SignalId.MSE])


class TestOrientationAndNonNegativity:
    def test_all_signals_nonnegative_except_rsmape(self, rng):
        for _ in range(25):
            y = rng.standard_normal((2, 4))
            yhat = rng.standard_normal((2, 4))
            vec = signal_vector(y, yhat, list(SignalId))
            ids = canonical_order(list(SignalId))
            for sid, value in zip(ids, vec):
                if sid is not SignalId.RSMAPE:
                    assert value >= 0.0, sid

    def test_orientation_flips_sign(self):
        values = np.array([[1.0, 2.0]])
        flipped = orient_values(values, (SignalId.MSE, SignalId.MAE))
        np.testing.assert_array_equal(flipped, [[-1.0, -2.0]])
