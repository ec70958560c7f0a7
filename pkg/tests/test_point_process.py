from __future__ import annotations

import math

import numpy as np
import pytest

from auctionflow import point_process as pp
from statutil import chi2_two_sample, se_of_lag_cov, se_of_mean, se_of_variance


def _interval(start: float = 0.0, end: float = 2.0) -> pp.TimeInterval:
    return pp.TimeInterval(start, end)


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------

def test_interval_rejects_degenerate_and_infinite() -> None:
    with pytest.raises(ValueError):
        pp.TimeInterval(1.0, 1.0)
    with pytest.raises(ValueError):
        pp.TimeInterval(2.0, 1.0)
    with pytest.raises(ValueError):
        pp.TimeInterval(0.0, math.inf)


def test_pattern_rejects_unsorted_and_out_of_window_times() -> None:
    iv = _interval()
    with pytest.raises(ValueError):
        pp.PointPattern(np.array([0.5, 0.2]), iv)
    with pytest.raises(ValueError):
        pp.PointPattern(np.array([0.5, 2.0]), iv)  # end is exclusive
    with pytest.raises(ValueError):
        pp.PointPattern(np.array([-0.1]), iv)


def test_generators_produce_valid_patterns_across_seeds() -> None:
    iv = _interval(0.0, 3.0)
    spec = pp.UserProcessSpec(7, 1.3, min_gap=0.2, cluster_excess=0.5)
    sncp = pp.SncpParams(2.0, pp.WeightSpec("exponential", value=2.0), pp.KernelSpec("gaussian", 0.3))
    for seed in range(40):
        for pat in (
            pp.sample_homogeneous_poisson(4.0, iv, seed),
            pp.sample_user_superposition(spec, iv, seed),
            pp.sample_sncp(sncp, iv, seed),
        ):
            assert pat.interval == iv
            if pat.count:
                assert np.all(np.diff(pat.times) >= 0)
                assert pat.times[0] >= iv.start and pat.times[-1] < iv.end


def test_generators_are_deterministic_per_seed() -> None:
    iv = _interval(0.0, 5.0)
    spec = pp.UserProcessSpec(5, 1.0, min_gap=0.1, cluster_excess=0.3)
    a = pp.sample_user_superposition(spec, iv, 99)
    b = pp.sample_user_superposition(spec, iv, 99)
    np.testing.assert_array_equal(a.times, b.times)
    params = pp.LgcpParams(1.5, 0.25, pp.Correlation("exponential", 2.0), np.arange(6.0))
    np.testing.assert_array_equal(
        pp.sample_lgcp(params, 7).counts, pp.sample_lgcp(params, 7).counts
    )


# ---------------------------------------------------------------------------
# homogeneous Poisson
# ---------------------------------------------------------------------------

def test_poisson_zero_rate_gives_empty_pattern() -> None:
    assert pp.sample_homogeneous_poisson(0.0, _interval(), 3).count == 0


def test_poisson_negative_rate_rejected() -> None:
    with pytest.raises(ValueError):
        pp.sample_homogeneous_poisson(-1.0, _interval(), 0)


@pytest.fixture(scope="module")
def poisson_counts() -> np.ndarray:
    iv = _interval(0.0, 2.0)
    return np.array(
        [pp.sample_homogeneous_poisson(5.0, iv, s).count for s in range(100_000)]
    )


def test_poisson_count_mean_matches_rate_times_length(poisson_counts) -> None:
    # rate 5 on a length-2 window: count ~ Poisson(10)
    assert abs(poisson_counts.mean() - 10.0) <= 3 * se_of_mean(poisson_counts)


def test_poisson_count_equidispersion(poisson_counts) -> None:
    assert abs(poisson_counts.var(ddof=1) - 10.0) <= 3 * se_of_variance(poisson_counts)


def test_poisson_times_uniform_over_interval() -> None:
    iv = _interval(0.0, 2.0)
    times = np.concatenate(
        [pp.sample_homogeneous_poisson(5.0, iv, s).times for s in range(2_000)]
    )
    # mean of U(0,2) is 1, variance 1/3
    assert abs(times.mean() - 1.0) <= 4 * times.std() / math.sqrt(times.size)


# ---------------------------------------------------------------------------
# user superposition
# ---------------------------------------------------------------------------

def test_superposition_single_undecorated_user_is_poisson() -> None:
    iv = _interval(0.0, 2.0)
    spec = pp.UserProcessSpec(1, 2.5, min_gap=0.0, cluster_excess=0.0)
    sup = np.array([pp.sample_user_superposition(spec, iv, s).count for s in range(20_000)])
    ref = np.array(
        [pp.sample_homogeneous_poisson(2.5, iv, s).count for s in range(20_000, 40_000)]
    )
    assert chi2_two_sample(sup, ref) > 0.01


def test_superposition_undecorated_matches_poisson_at_1e5_samples() -> None:
    # with min_gap=0 and cluster_excess=0 the union of independent user
    # streams is itself Poisson with the summed rate
    iv = _interval(0.0, 1.0)
    spec = pp.UserProcessSpec(10, 0.5, min_gap=0.0, cluster_excess=0.0)
    sup = np.array(
        [pp.sample_user_superposition(spec, iv, s).count for s in range(100_000)]
    )
    ref = np.array(
        [pp.sample_homogeneous_poisson(5.0, iv, s).count for s in range(100_000, 200_000)]
    )
    assert chi2_two_sample(sup, ref) > 0.01


def test_superposition_min_gap_caps_points_per_user() -> None:
    iv = _interval(0.0, 1.0)
    spec = pp.UserProcessSpec(5, 50.0, min_gap=2.0, cluster_excess=0.0)
    for seed in range(200):
        assert pp.sample_user_superposition(spec, iv, seed).count <= 5


def test_superposition_small_per_user_mass_close_to_poisson() -> None:
    # ten thousand users, each contributing expected mass 1e-3 on the window,
    # with a strong in-stream dependency; the count histogram should sit
    # within the short-interval bound (1e-3) of a matched Poisson, up to
    # Monte Carlo error on the histogram cells
    iv = _interval(0.0, 1.0)
    spec = pp.UserProcessSpec(10_000, 1e-3, min_gap=0.5, cluster_excess=0.0)
    n_rep = 20_000
    counts = np.array(
        [pp.sample_user_superposition(spec, iv, s).count for s in range(n_rep)]
    )
    lam_hat = counts.mean()
    hi = counts.max()
    emp = np.bincount(counts, minlength=hi + 1) / n_rep
    ks = np.arange(hi + 1)
    pois = np.exp(-lam_hat + ks * np.log(lam_hat) - [math.lgamma(k + 1) for k in ks])
    gaps = np.abs(emp - pois)
    se_cells = np.sqrt(np.maximum(emp * (1 - emp), 1e-12) / n_rep)
    assert np.all(gaps <= 1e-3 + 3 * se_cells + 3 * pois.max() / math.sqrt(n_rep))


def test_superposition_cluster_excess_inflates_counts() -> None:
    iv = _interval(0.0, 1.0)
    base = pp.UserProcessSpec(20, 1.0, min_gap=0.05, cluster_excess=0.0)
    boosted = pp.UserProcessSpec(20, 1.0, min_gap=0.05, cluster_excess=1.0)
    cb = np.array([pp.sample_user_superposition(base, iv, s).count for s in range(3_000)])
    cx = np.array([pp.sample_user_superposition(boosted, iv, s).count for s in range(3_000)])
    assert cx.mean() > cb.mean() * 1.5
    assert cx.var(ddof=1) / cx.mean() > cb.var(ddof=1) / cb.mean()


# ---------------------------------------------------------------------------
# shot-noise Cox
# ---------------------------------------------------------------------------

def test_sncp_zero_center_rate_gives_empty_pattern() -> None:
    par = pp.SncpParams(0.0, pp.WeightSpec("constant", value=3.0), pp.KernelSpec("boxcar", 0.2))
    assert pp.sample_sncp(par, _interval(0.0, 10.0), 11).count == 0


def test_sncp_kernel_bandwidth_must_be_positive() -> None:
    with pytest.raises(ValueError):
        pp.KernelSpec("boxcar", 0.0)
    with pytest.raises(ValueError):
        pp.KernelSpec("boxcar", -1.0)


@pytest.fixture(scope="module")
def sncp_counts() -> np.ndarray:
    par = pp.SncpParams(1.0, pp.WeightSpec("constant", value=3.0), pp.KernelSpec("boxcar", 0.2))
    iv = pp.TimeInterval(0.0, 10.0)
    return np.array([pp.sample_sncp(par, iv, s).count for s in range(30_000)])


def test_sncp_mean_count_matches_campbell_formula(sncp_counts) -> None:
    # E|pattern| = gamma * rate * (T - b/4): each unit-mass boxcar shot keeps
    # on average 1 - b/(4T) of its mass inside the window (uniform centers,
    # two symmetric edge losses), so the kept mean is 3 * 1 * (10 - 0.05)
    expected = 29.85
    assert abs(sncp_counts.mean() - expected) <= 3 * se_of_mean(sncp_counts)


def test_sncp_counts_overdispersed(sncp_counts) -> None:
    # law of total variance: Var = E(count) + Var(integrated intensity);
    # the second term is about 3 * mean here, so require a clear margin
    assert sncp_counts.var(ddof=1) > 2.0 * sncp_counts.mean()


# ---------------------------------------------------------------------------
# log-Gaussian Cox
# ---------------------------------------------------------------------------

def _lgcp_params(
    mu: float = 1.0, sigma2: float = math.log(4.0), n_bins: int = 8
) -> pp.LgcpParams:
    # exponential correlation with scale 1/ln 2 puts rho(1) = 0.5
    return pp.LgcpParams(
        mu, sigma2, pp.Correlation("exponential", 1.0 / math.log(2.0)), np.arange(float(n_bins))
    )


def test_lgcp_zero_variance_is_plain_poisson() -> None:
    par = _lgcp_params(mu=3.0, sigma2=0.0)
    counts = pp.sample_lgcp_batch(par, 20_000, 5).ravel().astype(float)
    assert abs(counts.mean() - 3.0) <= 3 * se_of_mean(counts)
    assert abs(counts.var(ddof=1) - 3.0) <= 3 * se_of_variance(counts)


def test_lgcp_empirical_moments_match_closed_forms() -> None:
    par = _lgcp_params()
    reps = pp.sample_lgcp_batch(par, 20_000, 17).astype(float)
    want = pp.lgcp_moments(par, 0, 1)
    col = reps[:, 3]
    assert abs(col.mean() - want.mean) <= 3 * se_of_mean(col)
    assert abs(col.var(ddof=1) - want.variance) <= 3 * se_of_variance(col)
    lag_est = np.cov(reps[:, 3], reps[:, 4])[0, 1]
    assert abs(lag_est - want.covariance) <= 3 * se_of_lag_cov(reps[:, 3], reps[:, 4])


def test_lgcp_overdispersed_when_field_nondegenerate() -> None:
    par = _lgcp_params()
    reps = pp.sample_lgcp_batch(par, 20_000, 23).astype(float)
    col = reps[:, 2]
    assert col.var(ddof=1) > col.mean()


def test_lgcp_moment_closed_forms_hand_values() -> None:
    par0 = _lgcp_params(mu=7.0, sigma2=0.0)
    m0 = pp.lgcp_moments(par0, 2, 2)
    assert m0.mean == pytest.approx(7.0)
    assert m0.variance == pytest.approx(7.0)

    par = _lgcp_params()  # mu 1, sigma2 ln 4
    m = pp.lgcp_moments(par, 0, 0)
    assert m.mean == pytest.approx(2.0)
    assert m.variance == pytest.approx(2.0 + 3.0 * 4.0)
    assert m.same_bin and m.covariance == pytest.approx(m.variance)

    lag1 = pp.lgcp_moments(par, 3, 4)
    # (e^{sigma2 * 0.5} - 1) e^{sigma2} * 1 * 1 = (2 - 1) * 4
    assert lag1.covariance == pytest.approx(4.0)
    assert not lag1.same_bin


def test_lgcp_covariance_vanishes_at_long_lags() -> None:
    par = _lgcp_params(n_bins=64)
    far = pp.lgcp_moments(par, 0, 63)
    assert abs(far.covariance) < 1e-12


def test_lgcp_moments_index_validation() -> None:
    par = _lgcp_params()
    with pytest.raises(ValueError):
        pp.lgcp_moments(par, 0, 8)


def test_lgcp_rejects_oversized_grid_and_non_psd_correlation() -> None:
    with pytest.raises(ValueError):
        pp.LgcpParams(1.0, 0.5, pp.Correlation("exponential", 1.0), np.arange(4097.0))
    bad = pp.LgcpParams(
        1.0, 0.5, lambda lag: np.where(np.asarray(lag) == 0, 1.0, -0.9), np.arange(3.0)
    )
    with pytest.raises(np.linalg.LinAlgError, match="positive semidefinite"):
        pp.sample_lgcp(bad, 1)


def test_lgcp_constant_correlation_is_singular_but_samplable() -> None:
    par = pp.LgcpParams(1.0, 0.3, pp.Correlation("constant"), np.arange(5.0))
    series = pp.sample_lgcp(par, 9)
    assert series.counts.shape == (5,)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_params_round_trip_from_dict() -> None:
    sncp = pp.sncp_params_from_dict(
        {
            "center_rate": 2.0,
            "gamma_dist": {"kind": "gamma", "shape": 2.0, "scale": 1.5},
            "kernel": {"kind": "gaussian", "bandwidth": 0.4},
        }
    )
    assert sncp.gamma_dist.mean == pytest.approx(3.0)
    lgcp = pp.lgcp_params_from_dict(
        {
            "mu": 1.0,
            "sigma2": 0.5,
            "rho": {"kind": "exponential", "scale": 2.0},
            "grid": {"start": 0.0, "step": 1.0, "n": 16},
        }
    )
    assert lgcp.n_bins == 16
    assert lgcp.mu.shape == (16,)


def test_csv_emission(tmp_path) -> None:
    iv = _interval(0.0, 2.0)
    pat = pp.sample_homogeneous_poisson(5.0, iv, 21)
    ppath = tmp_path / "pattern.csv"
    pp.write_pattern_csv(pat, ppath)
    lines = ppath.read_text().strip().splitlines()
    assert lines[0] == "time"
    assert len(lines) == pat.count + 1
    back = np.array([float(s) for s in lines[1:]])
    np.testing.assert_allclose(back, pat.times)

    series = pp.sample_lgcp(_lgcp_params(), 22)
    spath = tmp_path / "series.csv"
    pp.write_series_csv(series, spath)
    rows = spath.read_text().strip().splitlines()
    assert rows[0] == "bin,count"
    assert len(rows) == series.counts.size + 1
