"""Poisson-approximation bound calculators and count diagnostics.

The bound functions are exact formula evaluations on user-supplied summary
quantities (per-user means and Palm-count bounds are model inputs, not
estimates). The diagnostics operate on replicated count data: per-stratum
log(mean/variance) statistics, QQ pairing against a reference sample, and a
Monte Carlo estimate of the second-moment gap between a dependent process and
a matched-mean Poisson process.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._rng import substream
from .point_process import PointPattern

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TvBoundInputs:
    """Summary quantities feeding the general total-variation bound.

    lambdas are per-user expected counts on the window, r_bounds the matching
    bounds on expected extra points given an observed point (Palm counts);
    L and R cap them, delta1/delta2 are the user-chosen split thresholds.
    """

    lambdas: np.ndarray
    r_bounds: np.ndarray
    L: float
    R: float
    delta1: float
    delta2: float

    def __post_init__(self) -> None:
        lam = np.asarray(self.lambdas, dtype=float)
        r = np.asarray(self.r_bounds, dtype=float)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "r_bounds", r)
        if lam.shape != r.shape or lam.ndim != 1:
            raise ValueError("lambdas and r_bounds must be one-dimensional and equally long")
        if np.any(lam < 0) or np.any(r < 0) or self.L < 0 or self.R < 0:
            raise ValueError("all rates and bounds must be nonnegative")
        if self.delta1 <= 0 or self.delta2 <= 0:
            raise ValueError("delta1 and delta2 must be positive")
        if lam.size and lam.max() > self.L:
            raise ValueError(f"max lambda {lam.max()} exceeds its bound L={self.L}")
        if r.size and r.max() > self.R:
            raise ValueError(f"max r {r.max()} exceeds its bound R={self.R}")


def tv_bound_general(inputs: TvBoundInputs) -> float:
    """General superposition-vs-Poisson bound L*alpha + R*beta + d1 + d2.

    alpha (beta) is the fraction of total mass carried by users whose lambda
    (r bound) exceeds delta1 (delta2). An empty market (total mass zero)
    degenerates to d1 + d2 and is logged.
    """
    lam = inputs.lambdas
    total = float(np.sum(lam))
    if total == 0.0:
        logger.warning("tv_bound_general: empty market (sum of lambdas is 0)")
        return inputs.delta1 + inputs.delta2
    alpha = float(np.sum(lam[lam > inputs.delta1])) / total
    beta = float(np.sum(lam[inputs.r_bounds > inputs.delta2])) / total
    return inputs.L * alpha + inputs.R * beta + inputs.delta1 + inputs.delta2


def tv_bound_short_interval(
    l: float, interval_len: float, lambda_total: float
) -> tuple[float, float]:
    """Short-window bounds: count-metric l*|T| and total-variation lambda*l*|T|."""
    if l < 0 or interval_len < 0 or lambda_total < 0:
        raise ValueError("l, interval_len and lambda_total must be nonnegative")
    d_tv = l * interval_len
    return d_tv, lambda_total * d_tv


def poisson_tail_bound(lam: float, x: float) -> float:
    """Upper bound exp(-x^2 / (lam + x)) on P(X >= lam + x) for X ~ Poisson(lam)."""
    if lam <= 0 or x <= 0:
        raise ValueError("lam and x must be positive")
    return math.exp(-(x * x) / (lam + x))


@dataclass(frozen=True)
class CountMatrix:
    """Replicated window counts: one row per stratum, one column per window."""

    counts: np.ndarray
    strata: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-d matrix (strata x windows)")
        if counts.shape[1] < 2:
            raise ValueError("every stratum needs at least 2 replicate windows")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        strata = self.strata or tuple(f"s{i}" for i in range(counts.shape[0]))
        if len(strata) != counts.shape[0]:
            raise ValueError("one stratum label per row required")
        object.__setattr__(self, "strata", tuple(strata))


@dataclass(frozen=True)
class LogRatioStats:
    """Per-stratum log(mean/variance) values, with degenerate strata listed."""

    values: np.ndarray
    kept: tuple[str, ...]
    dropped: tuple[str, ...]


def log_mean_variance_ratio(data: CountMatrix) -> LogRatioStats:
    """Per-stratum ln(mean/variance); zero-variance strata are dropped.

    For Poisson-like data the values concentrate near 0; underdispersion
    pushes them positive, overdispersion negative.
    """
    counts = data.counts.astype(float)
    means = counts.mean(axis=1)
    variances = counts.var(axis=1, ddof=1)
    keep = variances > 0.0
    dropped = tuple(s for s, k in zip(data.strata, keep) if not k)
    kept = tuple(s for s, k in zip(data.strata, keep) if k)
    if dropped:
        logger.info("log_mean_variance_ratio: dropped %d zero-variance strata", len(dropped))
    if not kept:
        warnings.warn("all strata degenerate (zero variance); no statistics computed")
        return LogRatioStats(np.empty(0), kept, dropped)
    values = np.log(means[keep] / variances[keep])
    return LogRatioStats(values, kept, dropped)


def qq_against_poisson(
    actual_stats: Sequence[float], reference_stats: Sequence[float]
) -> np.ndarray:
    """Pair empirical quantiles of two samples at matched levels.

    Returns an (m, 2) array of (reference quantile, actual quantile) rows,
    m = min of the two sizes, levels at the usual midpoint plotting positions;
    unequal sizes are handled by linear interpolation of order statistics.
    """
    actual = np.asarray(actual_stats, dtype=float)
    reference = np.asarray(reference_stats, dtype=float)
    if actual.size == 0 or reference.size == 0:
        raise ValueError("both samples must be nonempty")
    m = int(min(actual.size, reference.size))
    levels = (np.arange(m) + 0.5) / m
    ref_q = _linear_quantiles(reference, levels)
    act_q = _linear_quantiles(actual, levels)
    return np.column_stack([ref_q, act_q])


def _linear_quantiles(sample: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # Same result as np.quantile(..., method="linear"), but one sort plus
    # interpolation; quantile's partition degrades badly for dense level grids.
    srt = np.sort(sample)
    return np.interp(levels * (srt.size - 1), np.arange(srt.size), srt)


def qq_central_slope(pairs: np.ndarray, window: tuple[float, float] = (-2.0, 2.0)) -> float:
    """Least-squares slope of actual on reference quantiles inside the window."""
    pairs = np.asarray(pairs, dtype=float)
    sel = (pairs[:, 0] >= window[0]) & (pairs[:, 0] <= window[1])
    if int(sel.sum()) < 2:
        raise ValueError("fewer than 2 QQ pairs fall inside the central window")
    x = pairs[sel, 0]
    y = pairs[sel, 1]
    vx = np.var(x)
    if vx == 0.0:
        raise ValueError("reference quantiles are constant inside the window")
    return float(np.cov(x, y, bias=True)[0, 1] / vx)


def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov distance (max ECDF gap)."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


@dataclass(frozen=True)
class GapEstimate:
    """Monte Carlo second-moment gap |E f(pattern)^2 - E f(Poisson)^2| +- SE."""

    gap: float
    se: float
    mean_sq_pattern: float
    mean_sq_poisson: float
    lambda_hat: float
    n_patterns: int
    n_poisson: int


def second_moment_gap(
    h_bound: float,
    patterns: Sequence[PointPattern],
    poisson_seeds: int,
    h: Callable[[np.ndarray], np.ndarray] | None = None,
    seed: int = 0,
) -> GapEstimate:
    """Estimate the second-moment gap of f(pattern) = sum of h over events.

    The comparison process is homogeneous Poisson on the same window with the
    total mean matched to the supplied patterns (plug-in estimate), sampled
    ``poisson_seeds`` times from a stream derived from ``seed``. With the
    default h = 1 the functional is the plain event count. h must be bounded
    by ``h_bound`` in absolute value; this is checked on every evaluated
    point. Means are accumulated with numpy's pairwise summation, so results
    do not depend on chunking.
    """
    if h_bound <= 0:
        raise ValueError("h_bound must be positive")
    if not patterns:
        raise ValueError("patterns must be nonempty")
    if poisson_seeds < 2:
        raise ValueError("poisson_seeds must be at least 2")
    interval = patterns[0].interval
    for pat in patterns:
        if pat.interval != interval:
            raise ValueError("all patterns must share one interval")

    def f_value(times: np.ndarray) -> float:
        if h is None:
            return float(times.size)
        vals = np.asarray(h(times), dtype=float)
        if vals.size and np.abs(vals).max() > h_bound + 1e-12:
            raise ValueError("h exceeds the declared bound h_bound")
        return float(np.sum(vals))

    f_pat = np.array([f_value(p.times) for p in patterns])
    lambda_hat = float(np.mean([p.count for p in patterns]))

    rng = substream(seed)
    ns = rng.poisson(lambda_hat, poisson_seeds)
    if h is None:
        f_poi = ns.astype(float)
    else:
        all_times = rng.uniform(interval.start, interval.end, int(ns.sum()))
        f_poi = np.empty(poisson_seeds)
        edges = np.concatenate([[0], np.cumsum(ns)])
        for i in range(poisson_seeds):
            f_poi[i] = f_value(np.sort(all_times[edges[i] : edges[i + 1]]))

    sq_pat = f_pat**2
    sq_poi = f_poi**2
    mean_pat = float(np.mean(sq_pat))
    mean_poi = float(np.mean(sq_poi))
    se_pat = float(np.std(sq_pat, ddof=1) / math.sqrt(sq_pat.size))
    se_poi = float(np.std(sq_poi, ddof=1) / math.sqrt(sq_poi.size))
    return GapEstimate(
        gap=abs(mean_pat - mean_poi),
        se=math.hypot(se_pat, se_poi),
        mean_sq_pattern=mean_pat,
        mean_sq_poisson=mean_poi,
        lambda_hat=lambda_hat,
        n_patterns=len(patterns),
        n_poisson=int(poisson_seeds),
    )


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def read_count_matrix_csv(path) -> CountMatrix:
    """Read a long-format CSV with columns stratum,window,count."""
    per_stratum: dict[str, dict[int, int]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"stratum", "window", "count"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"count CSV must have columns {sorted(required)}")
        for row in reader:
            per_stratum.setdefault(row["stratum"], {})[int(row["window"])] = int(row["count"])
    if not per_stratum:
        raise ValueError("count CSV contains no rows")
    widths = {len(v) for v in per_stratum.values()}
    if len(widths) != 1:
        raise ValueError("every stratum must have the same number of windows")
    strata = tuple(per_stratum)
    counts = np.array(
        [[cnt for _, cnt in sorted(per_stratum[s].items())] for s in strata]
    )
    return CountMatrix(counts, strata)


def write_count_matrix_csv(data: CountMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stratum", "window", "count"])
        for label, row in zip(data.strata, data.counts):
            for w, c in enumerate(row):
                writer.writerow([label, w, int(c)])
