import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlquant import calibration as cal
from nlquant.data import ActivationBatch, SyntheticDistSpec, generate, make_batches


class TestPercentile:
    def test_examples(self):
        assert cal.percentile([1, 2, 3, 4], 0) == 1
        assert cal.percentile([1, 2, 3, 4], 0.5) == 2.5
        assert cal.percentile([4, 3, 2, 1], 1) == 4

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
        st.floats(0, 1),
    )
    def test_matches_numpy_linear(self, xs, q):
        assert cal.percentile(xs, q) == pytest.approx(float(np.percentile(xs, 100 * q)), rel=1e-12, abs=1e-9)

    def test_uniform_low_tail(self):
        for seed in range(50):
            x = np.random.default_rng(seed).uniform(size=1000)
            assert abs(cal.percentile(x, 0.005) - 0.005) <= 0.01

    def test_errors(self):
        with pytest.raises(ValueError):
            cal.percentile([], 0.5)
        with pytest.raises(ValueError):
            cal.percentile([1.0], 1.5)


class TestTrim:
    def test_small_batch_keeps_bulk(self):
        # alpha*(n-1) < 1, so the low bound is the minimum; the top bound
        # interpolates 2.5% of the way from 2 to 100 and drops the outlier
        central, lo, hi = cal.trim_batch([0, 0, 0, 1, 2, 100], 0.005)
        np.testing.assert_array_equal(central, [0, 0, 0, 1, 2])
        assert lo == 0 and hi == 2

    def test_duplicated_extremes_survive(self):
        central, lo, hi = cal.trim_batch([0, 0, 0, 1, 100, 100], 0.005)
        assert central.size == 6 and hi == 100

    def test_two_samples_keep_median_pair(self):
        central, lo, hi = cal.trim_batch([10.0, 0.0], 0.005)
        np.testing.assert_array_equal(central, [10.0, 0.0])
        central, lo, hi = cal.trim_batch([3.0, 0.0, 1.0], 0.4)
        np.testing.assert_array_equal(central, [1.0])

    def test_few_outliers_removed(self):
        g = np.random.default_rng(0)
        clean = g.uniform(size=996)
        x = np.concatenate([clean, np.full(4, 1e6)])
        _, _, hi = cal.trim_batch(x, 0.005)
        assert hi < 1e6

    def test_constant(self):
        central, lo, hi = cal.trim_batch([3.5] * 100)
        assert central.size == 100 and lo == hi == 3.5

    def test_central_within_percentiles_and_order(self):
        g = np.random.default_rng(3)
        x = g.lognormal(size=777)
        central, lo, hi = cal.trim_batch(x, 0.01)
        p_lo, p_hi = cal.percentile(x, 0.01), cal.percentile(x, 0.99)
        assert np.all((central >= p_lo) & (central <= p_hi))
        np.testing.assert_array_equal(central, x[(x >= p_lo) & (x <= p_hi)])
        assert lo == central.min() and hi == central.max()

    def test_needs_two(self):
        with pytest.raises(ValueError):
            cal.trim_batch([1.0])

    def test_outlier_robustness(self):
        g = np.random.default_rng(11)
        n = 1000
        k_max = int(np.floor(0.005 * (n - 1)))
        for k in range(0, k_max + 1):
            clean = g.uniform(size=n)
            iqr = np.subtract(*np.percentile(clean, [75, 25]))
            _, lo0, hi0 = cal.trim_batch(clean)
            dirty = clean.copy()
            dirty[g.choice(n, k, replace=False)] = 1e6
            _, lo1, hi1 = cal.trim_batch(dirty)
            assert abs(lo1 - lo0) < iqr and abs(hi1 - hi0) < iqr


class TestObserve:
    def test_first_batch_sets_range(self):
        st0 = cal.CalibrationState()
        st1 = cal.observe_batch(st0, ActivationBatch([0, 0, 4, 8, 8]))
        assert (st1.g_min, st1.g_max, st1.t) == (0.0, 8.0, 1)
        assert st0.t == 0

    def test_ema_step(self):
        st = cal.CalibrationState()
        st = cal.observe_batch(st, ActivationBatch([0, 0, 4, 8, 8]))
        st = cal.observe_batch(st, ActivationBatch([0, 0, 4, 18, 18]))
        assert st.g_max == pytest.approx(9.0, abs=1e-12)
        assert st.g_min == 0.0 and st.t == 2

    def test_ema_contraction(self):
        st = cal.CalibrationState()
        st = cal.observe_batch(st, ActivationBatch([0.0, 0.0, 10.0, 10.0]))
        prev = abs(st.g_max - 2.0)
        for _ in range(20):
            st = cal.observe_batch(st, ActivationBatch([0.0, 0.0, 2.0, 2.0]))
            gap = abs(st.g_max - 2.0)
            assert gap == pytest.approx(0.9 * prev, rel=1e-9)
            prev = gap

    def test_fixed_point(self):
        b = ActivationBatch(np.random.default_rng(0).normal(size=500))
        _, _, bmax = cal.trim_batch(b)
        st = cal.CalibrationState()
        st = cal.observe_batch(st, ActivationBatch(b.samples * 3))
        for _ in range(200):
            st = cal.observe_batch(st, b)
        assert abs(st.g_max - bmax) < 1e-6 * abs(bmax)

    def test_pool_is_trimmed_union_in_order(self):
        bs = generate(SyntheticDistSpec("lognormal", seed=2), 5, 300)
        st = cal.CalibrationState(alpha=0.02)
        parts = []
        for b in bs:
            st = cal.observe_batch(st, b)
            parts.append(cal.trim_batch(b, 0.02)[0])
        np.testing.assert_array_equal(st.pool, np.concatenate(parts))
        assert st.g_min <= st.g_max

    def test_reservoir_cap(self):
        bs = generate(SyntheticDistSpec("uniform", seed=2), 20, 1000)
        res = cal.calibrate(bs, pool_limit=5000, seed=4)
        again = cal.calibrate(bs, pool_limit=5000, seed=4)
        assert res.pool.size == 5000
        np.testing.assert_array_equal(res.pool, again.pool)
        everything = np.concatenate([cal.trim_batch(b)[0] for b in bs])
        assert np.all(np.isin(res.pool, everything))
        # later batches are represented, not just the first few
        assert abs(res.pool.mean() - 0.5) < 0.02

    @pytest.mark.parametrize("alpha", [0.0, 0.5, -0.1, 0.7])
    def test_alpha_validation(self, alpha):
        with pytest.raises(ValueError):
            cal.CalibrationState(alpha=alpha)


class TestFinish:
    def test_no_batches(self):
        with pytest.raises(ValueError):
            cal.finish(cal.CalibrationState())
        with pytest.raises(ValueError):
            cal.calibrate([])

    def test_uniform_range(self):
        res = cal.calibrate(make_batches([np.linspace(0, 8, 1001)]))
        assert res.g_min == pytest.approx(0, abs=0.05) and res.g_max == pytest.approx(8, abs=0.05)
        assert not res.degenerate

    def test_constant_widens(self):
        res = cal.calibrate(make_batches([[5.0] * 50] * 3))
        eps = max(1e-9, 1e-9 * 5.0)
        assert res.degenerate
        assert res.range == (5.0 - eps, 5.0 + eps)

    def test_relu_gauss_zero_floor(self):
        res = cal.calibrate(generate(SyntheticDistSpec("relu_gauss", seed=1), 32, 4096))
        assert res.g_min == 0.0
        assert res.batches == 32 and len(res.trimmed_fractions) == 32
