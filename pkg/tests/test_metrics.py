import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcopula.forecasting import ForecastSamples
from gpcopula.metrics import (
    MIDPOINT_LEVELS,
    QuantileForecast,
    crps_from_samples,
    crps_marginal,
    crps_sum,
    evaluate,
    mse,
    mse_sum,
    pinball,
    sample_quantiles,
    summarize,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def oracle_crps(samples, y):
    """Plain loop: nearest-rank quantile at each midpoint level, mean of twice the pinball loss."""
    s = sorted(samples)
    total = 0.0
    for j in range(1, 11):
        alpha = (j - 0.5) / 10
        q = s[max(math.ceil(alpha * len(s)) - 1, 0)]
        total += 2 * (alpha - (1.0 if y < q else 0.0)) * (y - q)
    return total / 10


def test_pinball_examples():
    assert pinball(0.5, 0.0, 2.0) == 1.0
    assert pinball(0.9, 5.0, 3.0) == pytest.approx(0.2)
    for a in (0.0, 0.3, 1.0):
        assert pinball(a, 1.5, 1.5) == 0.0


@given(st.floats(0, 1), finite, finite)
def test_pinball_nonnegative(alpha, q, y):
    assert pinball(alpha, q, y) >= 0


def test_levels_are_midpoints():
    np.testing.assert_allclose(MIDPOINT_LEVELS, np.arange(1, 11) / 10 - 0.05)
    assert sum(MIDPOINT_LEVELS) == pytest.approx(5.0)


def test_nearest_rank_quantiles():
    samples = np.arange(1.0, 11.0)[::-1]
    np.testing.assert_array_equal(sample_quantiles(samples), np.arange(1.0, 11.0))
    assert sample_quantiles([4.0], [0.05, 0.95]).tolist() == [4.0, 4.0]
    q = QuantileForecast.from_samples(np.random.default_rng(0).normal(size=50))
    assert np.all(np.diff(q.values) >= 0)
    with pytest.raises(ValueError):
        QuantileForecast.from_samples([1.0], [0.5, 0.2])


@settings(max_examples=300)
@given(finite, finite, st.integers(1, 30))
def test_point_mass_is_exact(q, y, s):
    assert crps_from_samples(np.full(s, q), y) == abs(y - q)


def test_point_mass_examples():
    assert crps_from_samples([2.0] * 5, 2.0) == 0.0
    assert crps_from_samples([0.1] * 3, 0.3) == abs(0.3 - 0.1)


@settings(max_examples=200)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.floats(-100, 100))
def test_matches_loop_oracle_and_nonnegative(samples, y):
    c = crps_from_samples(samples, y)
    assert c >= 0
    assert c == pytest.approx(oracle_crps(samples, y), rel=1e-12, abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.floats(-100, 100), st.randoms())
def test_invariant_to_sample_order(samples, y, rnd):
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    assert crps_from_samples(shuffled, y) == crps_from_samples(samples, y)


def test_zero_iff_quantiles_equal_y():
    assert crps_from_samples([1.0, 1.0, 1.0], 1.0) == 0.0
    # with S=20 the largest sample is never an extracted rank
    assert crps_from_samples([1.0] * 19 + [7.0], 1.0) == 0.0
    assert crps_from_samples([1.0] * 9 + [2.0], 1.0) > 0


def test_gaussian_at_mean():
    s = np.random.default_rng(0).standard_normal(10_000)
    assert crps_from_samples(s, 0.0) == pytest.approx((math.sqrt(2) - 1) / math.sqrt(math.pi), abs=0.02)


def test_empty_samples_rejected():
    with pytest.raises(ValueError):
        crps_from_samples([], 1.0)
    with pytest.raises(ValueError):
        crps_marginal(np.zeros((0, 2, 2)), np.zeros((2, 2)))


def test_propriety():
    rng = np.random.default_rng(1)
    diff = []
    for _ in range(1000):
        y = rng.standard_normal()
        diff.append(crps_from_samples(rng.standard_normal(200) + 1, y) - crps_from_samples(rng.standard_normal(200), y))
    diff = np.array(diff)
    assert diff.mean() > 5 * diff.std(ddof=1) / math.sqrt(len(diff))


def test_marginal_reductions():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(50, 1, 1))
    assert crps_marginal(s, [[0.3]]) == crps_from_samples(s[:, 0, 0], 0.3)
    two = np.concatenate([s, s], axis=1)
    assert crps_marginal(two, [[0.3], [0.3]]) == crps_marginal(s, [[0.3]])
    assert crps_marginal(two, two[0]) >= 0
    assert crps_marginal(np.repeat(two[:1], 4, axis=0), two[0]) == 0.0


def test_accepts_forecast_objects_and_checks_shapes():
    s = np.random.default_rng(3).normal(size=(20, 2, 3))
    fc = ForecastSamples(s, 0, 0, "index", ["a", "b"])
    assert crps_marginal(fc, np.zeros((2, 3))) == crps_marginal(s, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        crps_marginal(fc, np.zeros((3, 2)))


def test_crps_sum_cases():
    rng = np.random.default_rng(4)
    s = rng.normal(size=(30, 1, 4))
    a = rng.normal(size=(1, 4))
    assert crps_sum(s, a) == crps_marginal(s, a)
    x = rng.normal(size=(40, 3))
    anti = np.stack([x, 5.0 - x], axis=1)  # (S, 2, tau), sum fixed at 5
    assert crps_sum(anti, np.array([[2.0] * 3, [3.0] * 3])) == 0.0


def test_crps_sum_sees_dependence():
    # same marginals {0..9}; comonotone vs reversed (anticorrelated) pairing
    base = np.arange(10.0)
    como = np.stack([base, base], axis=1)[:, :, None]
    anti = np.stack([base, base[::-1]], axis=1)[:, :, None]
    actual = np.array([[8.0], [8.5]])
    assert crps_marginal(como, actual) == crps_marginal(anti, actual)
    c1, c2 = crps_sum(como, actual), crps_sum(anti, actual)
    assert c1 == pytest.approx(oracle_crps(2 * base, 16.5), rel=1e-14)
    assert c2 == pytest.approx(oracle_crps(np.full(10, 9.0), 16.5), rel=1e-14)
    assert c2 == 7.5 and c1 < c2


def test_mse_examples():
    s = np.array([[[1.0], [3.0]]])
    assert mse(s, [[1.0], [2.0]]) == 0.5
    assert mse_sum(s, [[1.0], [2.0]]) == 1.0
    r = np.random.default_rng(5).normal(size=(10, 3, 2))
    assert mse(r, r.mean(axis=0)) == 0.0
    assert mse(r, r.mean(axis=0) - 0.25) == pytest.approx(0.0625, rel=1e-12)


def test_evaluate_and_summarize():
    r = np.random.default_rng(6).normal(size=(10, 3, 2))
    sc = evaluate(r, np.zeros((3, 2)))
    assert set(sc) == {"crps", "crps_sum", "mse", "mse_sum"}
    rep = summarize([sc, {k: 0.0 for k in sc}], 10, 2)
    assert rep["windows"] == 2 and rep["num_samples"] == 10 and rep["horizon"] == 2
    assert rep["crps"] == pytest.approx(sc["crps"] / 2)
    with pytest.raises(ValueError):
        summarize([], 1, 1)
