import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankbias.datagen import Constant, DgpConfig, generate
from rankbias.ranking import (
    BUCKET_REPORT_COLUMNS,
    bucket_ate,
    bucket_ate_se,
    bucket_noise,
    bucket_prediction_quantiles,
    bucket_report,
    bucketize,
    empirical_cdf,
    noise_by_rank_profile,
    write_bucket_report,
)


def test_cdf_small_example():
    np.testing.assert_allclose(empirical_cdf([0.1, 0.3, 0.2]).cdf, [1 / 3, 1, 2 / 3])


def test_cdf_all_tied():
    assert np.all(empirical_cdf(np.full(7, 2.5)).cdf == 1.0)


def test_cdf_continuous_is_permutation(rng):
    F = empirical_cdf(rng.random(1000)).cdf
    np.testing.assert_allclose(np.sort(F), np.arange(1, 1001) / 1000)


def test_cdf_ties_share_max_rank():
    r = empirical_cdf([3.0, 1.0, 1.0, 2.0])
    np.testing.assert_array_equal(r.counts, [4, 2, 2, 3])


@pytest.mark.parametrize("bad", [[np.nan, 1.0], [np.inf], []])
def test_cdf_rejects(bad):
    with pytest.raises(ValueError):
        empirical_cdf(bad)


@pytest.mark.filterwarnings("ignore:.*rows spread over")
@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=60))
def test_cdf_invariants(values):
    r = empirical_cdf(values)
    s = np.asarray(values, dtype=float)
    assert r.cdf.max() == 1.0
    assert r.cdf.min() == np.sum(s == s.min()) / s.size
    order = np.argsort(s, kind="stable")
    assert np.all(np.diff(r.cdf[order]) >= 0)
    b = bucketize(r, 4)
    assert b.min() >= 0 and b.max() <= 3


def test_bucketize_examples():
    assert bucketize(np.array([0.005]), 100)[0] == 0
    np.testing.assert_array_equal(bucketize(np.array([0.25, 0.5, 0.75, 1.0]), 2), [0, 0, 1, 1])
    np.testing.assert_array_equal(np.sort(bucketize(empirical_cdf([4.0, 1.0, 3.0, 2.0]), 4)), [0, 1, 2, 3])


def test_bucketize_right_closed_boundaries():
    # F = 3/10 with B = 10 sits at a boundary and belongs to the lower bucket
    r = empirical_cdf(np.arange(10.0))
    np.testing.assert_array_equal(bucketize(r, 10), np.arange(10))
    np.testing.assert_array_equal(bucketize(r, 5), np.repeat(np.arange(5), 2))


def test_bucketize_rejects_and_warns():
    with pytest.raises(ValueError):
        bucketize(empirical_cdf([1.0, 2.0]), 1)
    with pytest.warns(UserWarning):
        bucketize(empirical_cdf([1.0, 2.0]), 3)


@pytest.mark.filterwarnings("ignore:.*rows spread over")
@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=80), st.integers(2, 12))
def test_bucketize_monotone_transform_invariant(values, B):
    s = np.asarray(values)
    t = np.arctan(s / 1e3) * 7 + 3
    # arctan can merge distinct large values in floating point; compare only where it stays injective
    if np.unique(t).size == np.unique(s).size:
        np.testing.assert_array_equal(bucketize(empirical_cdf(s), B), bucketize(empirical_cdf(t), B))


def test_bucket_ate_examples():
    assert bucket_ate([1, 0, 0, 0], [1, 1, 0, 0]) == 0.5
    assert bucket_ate([1, 0, 1, 0], [1, 1, 0, 0]) == 0.0
    assert math.isnan(bucket_ate([1, 0], [1, 1]))
    assert math.isnan(bucket_ate_se([1, 0], [0, 0]))


def test_bucket_ate_constant_effect():
    d = generate(DgpConfig(100_000, 0.5, Constant(0.3), Constant(0.1), seed=1))
    est = bucket_ate(d.outcome, d.treatment)
    assert abs(est - 0.1) <= 3 * bucket_ate_se(d.outcome, d.treatment)


def test_bucket_ate_se_positive_for_degenerate_bucket():
    assert bucket_ate_se([0, 0, 0, 0], [1, 1, 0, 0]) > 0


@pytest.mark.parametrize("mu, want", [([0.5, 0.5], 0.25), ([0.0, 1.0], 0.0), ([0.1, 0.3], 0.15)])
def test_bucket_noise(mu, want):
    assert bucket_noise(mu) == pytest.approx(want, abs=1e-15)


def test_bucket_noise_rejects_out_of_range():
    with pytest.raises(ValueError):
        bucket_noise([0.5, 1.2])


def test_prediction_quantiles():
    assert bucket_prediction_quantiles(np.full(9, 0.3)) == (0.3, 0.3, 0.3)
    assert bucket_prediction_quantiles(np.arange(1, 101)) == (50.5, 5.0, 95.0)
    assert bucket_prediction_quantiles([7.0]) == (7.0, 7.0, 7.0)
    with pytest.raises(ValueError):
        bucket_prediction_quantiles([])


def test_mean_can_leave_quantile_band():
    # a heavy upper tail drags the mean above the 95% order statistic
    mean, q05, q95 = bucket_prediction_quantiles([0.0] * 99 + [1000.0])
    assert q05 <= q95 < mean


def test_noise_profile_constant_mu_is_flat(rng):
    prof = noise_by_rank_profile(rng.random(10_000), np.full(10_000, 0.21), 50)
    assert np.all(prof == 0.21)


def test_noise_profile_flat_when_scores_independent():
    rng = np.random.default_rng(2024)
    n, B = 200_000, 20
    mu = rng.random(n)
    noise = mu * (1 - mu)
    prof = noise_by_rank_profile(rng.random(n), noise, B)
    se = noise.std() / math.sqrt(n / B)
    assert np.all(np.abs(prof - noise.mean()) <= 3 * se)


def test_noise_profile_permutation_invariant(rng):
    s = rng.random(5000)
    v = rng.random(5000) * 0.25
    perm = rng.permutation(5000)
    assert noise_by_rank_profile(s, v, 100).tobytes() == noise_by_rank_profile(s[perm], v[perm], 100).tobytes()


def test_noise_profile_length_mismatch():
    with pytest.raises(ValueError):
        noise_by_rank_profile([1.0, 2.0], [0.1], 2)


def _report_data(rng, n=4000):
    s = rng.random(n)
    w = rng.integers(0, 2, n)
    y = (rng.random(n) < 0.3 + 0.2 * s * w).astype(int)
    return s, y, w


def test_bucket_ate_arm_weighted_sum_equals_difference_in_means(rng):
    s, y, w = _report_data(rng)
    stats = bucket_report(s, y, w, 10)
    n1, n0 = w.sum(), (1 - w).sum()
    buckets = bucketize(empirical_cdf(s), 10)
    mean1 = [y[(buckets == b.bucket) & (w == 1)].mean() for b in stats]
    mean0 = [y[(buckets == b.bucket) & (w == 0)].mean() for b in stats]
    total = sum(b.n_treated / n1 * m1 - b.n_control / n0 * m0 for b, m1, m0 in zip(stats, mean1, mean0))
    assert abs(total - (y[w == 1].mean() - y[w == 0].mean())) <= 1e-10


def test_bucket_ate_size_weighted_sum_with_balanced_arms():
    # every bucket holds the overall treated share, so size weights are exact
    rng = np.random.default_rng(5)
    B, per = 10, 40
    s = np.repeat(np.arange(B, dtype=float), per)
    w = np.tile(np.array([1] * 10 + [0] * 30), B)
    y = rng.integers(0, 2, B * per)
    stats = bucket_report(s, y, w, B)
    weighted = sum(b.n / s.size * b.ate_hat for b in stats)
    assert abs(weighted - (y[w == 1].mean() - y[w == 0].mean())) <= 1e-10


def test_bucket_report_fields(rng):
    s, y, w = _report_data(rng)
    stats = bucket_report(s, y, w, 20)
    assert len(stats) == 20
    assert sum(b.n for b in stats) == s.size
    for b in stats:
        assert b.n_treated + b.n_control == b.n
        assert 0 <= b.noise_hat <= 0.25
        assert b.pred_q05 <= b.pred_q95
        assert b.lo == b.bucket / 20 and b.hi == (b.bucket + 1) / 20


def test_bucket_report_empty_arm_is_missing(tmp_path):
    s = np.arange(8.0)
    w = np.array([0, 0, 1, 0, 1, 0, 1, 1])
    y = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    stats = bucket_report(s, y, w, 4)
    assert math.isnan(stats[0].ate_hat)
    path = tmp_path / "b.csv"
    write_bucket_report(stats, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == BUCKET_REPORT_COLUMNS
    assert rows[1][BUCKET_REPORT_COLUMNS.index("ate_hat")] == ""


def test_bucket_report_order_independent(rng):
    s, y, w = _report_data(rng)
    perm = rng.permutation(s.size)
    a = bucket_report(s, y, w, 10)
    b = bucket_report(s[perm], y[perm], w[perm], 10)
    assert [x.row() for x in a] == [x.row() for x in b]
