"""Temporal point-process generators and closed-form count moments.

Four generators cover the market-traffic models used across the toolkit: a
homogeneous Poisson baseline, a per-user superposition with both negative
(minimum-gap thinning) and positive (clustered offspring) dependence, and two
Cox constructions (shot-noise and log-Gaussian). The log-Gaussian model also
exposes exact first and second moments of its bin counts, which the
diagnostics and acceptance tests use as oracles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._rng import substream

logger = logging.getLogger(__name__)

MAX_LGCP_GRID_BINS = 4096


@dataclass(frozen=True)
class TimeInterval:
    """Half-open observation window [start, end), in seconds."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError("interval endpoints must be finite")
        if self.end <= self.start:
            raise ValueError(
                f"interval end must exceed start, got [{self.start}, {self.end})"
            )

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class PointPattern:
    """Sorted event times inside one observation interval."""

    times: np.ndarray
    interval: TimeInterval

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if times.ndim != 1:
            raise ValueError("times must be a one-dimensional array")
        if times.size:
            if np.any(np.diff(times) < 0):
                raise ValueError("times must be sorted nondecreasing")
            if times[0] < self.interval.start or times[-1] >= self.interval.end:
                raise ValueError("every event time must lie in [start, end)")

    @property
    def count(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class UserProcessSpec:
    """Per-user stream model for the superposed opportunity process.

    Each of ``n_users`` contributes an independent stream: Poisson arrivals at
    ``per_user_rate``, greedily thinned so consecutive kept arrivals are at
    least ``min_gap`` seconds apart, after which every kept arrival spawns
    Poisson(``cluster_excess``) offspring placed uniformly within
    ``10 * min_gap`` seconds of the parent.
    """

    n_users: int
    per_user_rate: float
    min_gap: float = 0.0
    cluster_excess: float = 0.0

    def __post_init__(self) -> None:
        if self.n_users < 1:
            raise ValueError("n_users must be at least 1")
        if self.per_user_rate < 0:
            raise ValueError("per_user_rate must be nonnegative")
        if self.min_gap < 0:
            raise ValueError("min_gap must be nonnegative")
        if self.cluster_excess < 0:
            raise ValueError("cluster_excess must be nonnegative")


@dataclass(frozen=True)
class KernelSpec:
    """Unit-mass smoothing kernel for shot-noise intensities."""

    kind: str
    bandwidth: float

    _KINDS = ("boxcar", "gaussian")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"kernel kind must be one of {self._KINDS}, got {self.kind!r}")
        if self.bandwidth <= 0:
            raise ValueError("kernel bandwidth must be positive")

    def sample_offsets(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "boxcar":
            return rng.uniform(-self.bandwidth / 2.0, self.bandwidth / 2.0, n)
        return rng.normal(0.0, self.bandwidth, n)


@dataclass(frozen=True)
class WeightSpec:
    """Distribution of the nonnegative shot weight attached to each center."""

    kind: str
    value: float = 1.0
    shape: float = 1.0
    scale: float = 1.0

    _KINDS = ("constant", "exponential", "gamma")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"weight kind must be one of {self._KINDS}, got {self.kind!r}")
        if self.kind == "constant" and self.value < 0:
            raise ValueError("constant weight must be nonnegative")
        if self.kind == "exponential" and self.value <= 0:
            raise ValueError("exponential weight mean must be positive")
        if self.kind == "gamma" and (self.shape <= 0 or self.scale <= 0):
            raise ValueError("gamma weight shape and scale must be positive")

    @property
    def mean(self) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "exponential":
            return self.value
        return self.shape * self.scale

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, self.value)
        if self.kind == "exponential":
            return rng.exponential(self.value, n)
        return rng.gamma(self.shape, self.scale, n)


@dataclass(frozen=True)
class SncpParams:
    """Shot-noise Cox model: random centers, random weights, fixed kernel."""

    center_rate: float
    gamma_dist: WeightSpec
    kernel: KernelSpec

    def __post_init__(self) -> None:
        if self.center_rate < 0:
            raise ValueError("center_rate must be nonnegative")


@dataclass(frozen=True)
class Correlation:
    """Named stationary correlation family rho(lag), with rho(0) = 1."""

    kind: str
    scale: float = 1.0

    _KINDS = ("exponential", "gaussian", "constant")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"correlation kind must be one of {self._KINDS}, got {self.kind!r}")
        if self.kind != "constant" and self.scale <= 0:
            raise ValueError("correlation scale must be positive")

    def __call__(self, lag):
        lag = np.abs(np.asarray(lag, dtype=float))
        if self.kind == "exponential":
            return np.exp(-lag / self.scale)
        if self.kind == "gaussian":
            return np.exp(-0.5 * (lag / self.scale) ** 2)
        return np.ones_like(lag)


@dataclass(frozen=True)
class LgcpParams:
    """Log-Gaussian Cox model on a discrete grid of bin centers.

    The bin intensity is ``mu(t) * exp(G(t))`` where G is a centered Gaussian
    vector with covariance ``sigma2 * rho(|t_i - t_j|)`` over the grid. ``mu``
    is expressed in expected events per bin and may be a scalar (constant
    baseline) or one value per bin.
    """

    mu: np.ndarray
    sigma2: float
    rho: Callable[[np.ndarray], np.ndarray]
    grid: np.ndarray

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        if grid.ndim != 1 or grid.size < 1:
            raise ValueError("grid must be a nonempty one-dimensional array")
        if grid.size > MAX_LGCP_GRID_BINS:
            raise ValueError(
                f"grid has {grid.size} bins; dense factorization is limited to "
                f"{MAX_LGCP_GRID_BINS}"
            )
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid bin centers must be strictly increasing")
        mu = np.broadcast_to(np.asarray(self.mu, dtype=float), grid.shape).copy()
        object.__setattr__(self, "mu", mu)
        if np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise ValueError("mu must be finite and nonnegative")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def n_bins(self) -> int:
        return int(self.grid.size)


@dataclass(frozen=True)
class CountSeries:
    """Nonnegative event counts per grid bin."""

    counts: np.ndarray
    grid: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "grid", grid)
        if counts.shape != grid.shape:
            raise ValueError("counts and grid must have the same length")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")


@dataclass(frozen=True)
class LgcpMoments:
    """Closed-form bin-count moments; covariance falls back to the variance
    branch when both indices name the same bin (``same_bin`` is then set)."""

    mean: float
    variance: float
    covariance: float
    same_bin: bool


def sample_homogeneous_poisson(
    rate: float, interval: TimeInterval, seed: int
) -> PointPattern:
    """Sample a homogeneous Poisson pattern on the interval.

    The count is Poisson(rate * length) and, given the count, event times are
    i.i.d. uniform over the interval.
    """
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    rng = substream(seed)
    n = rng.poisson(rate * interval.length)
    times = np.sort(rng.uniform(interval.start, interval.end, n))
    return PointPattern(times, interval)


def _thin_min_gap(sorted_times: np.ndarray, gap: float) -> np.ndarray:
    kept = [sorted_times[0]]
    last = sorted_times[0]
    for t in sorted_times[1:]:
        if t - last >= gap:
            kept.append(t)
            last = t
    return np.asarray(kept)


def sample_user_superposition(
    spec: UserProcessSpec, interval: TimeInterval, seed: int
) -> PointPattern:
    """Sample the union of all per-user streams.

    Users are drawn in index order from a single seed-derived stream, so the
    output is a pure function of (spec, interval, seed). Offspring falling
    outside the interval are dropped rather than clipped, to avoid boundary
    atoms.
    """
    rng = substream(seed)
    start, end = interval.start, interval.end
    counts = rng.poisson(spec.per_user_rate * interval.length, spec.n_users)
    spread = 10.0 * spec.min_gap
    parts: list[np.ndarray] = []
    for i in np.flatnonzero(counts):
        t = np.sort(rng.uniform(start, end, counts[i]))
        if spec.min_gap > 0.0 and t.size > 1:
            t = _thin_min_gap(t, spec.min_gap)
        parts.append(t)
        if spec.cluster_excess > 0.0:
            brood = rng.poisson(spec.cluster_excess, t.size)
            total = int(brood.sum())
            if total:
                offs = np.repeat(t, brood) + rng.uniform(-spread, spread, total)
                offs = offs[(offs >= start) & (offs < end)]
                parts.append(offs)
    if parts:
        times = np.sort(np.concatenate(parts))
    else:
        times = np.empty(0)
    return PointPattern(times, interval)


def sample_sncp(params: SncpParams, interval: TimeInterval, seed: int) -> PointPattern:
    """Sample a shot-noise Cox pattern restricted to the interval.

    Uses the exact cluster representation: centers form a homogeneous Poisson
    process on the interval, each center carries a weight gamma and spawns
    Poisson(gamma) points spread by the kernel; kernel mass leaking outside
    the interval is discarded.
    """
    rng = substream(seed)
    n_centers = rng.poisson(params.center_rate * interval.length)
    centers = rng.uniform(interval.start, interval.end, n_centers)
    gammas = params.gamma_dist.sample(rng, n_centers)
    per_shot = rng.poisson(gammas) if n_centers else np.empty(0, dtype=int)
    parents = np.repeat(centers, per_shot)
    pts = parents + params.kernel.sample_offsets(rng, parents.size)
    pts = pts[(pts >= interval.start) & (pts < interval.end)]
    return PointPattern(np.sort(pts), interval)


def _correlation_matrix(params: LgcpParams) -> np.ndarray:
    lags = np.abs(params.grid[:, None] - params.grid[None, :])
    corr = np.asarray(params.rho(lags), dtype=float)
    if corr.shape != lags.shape:
        raise ValueError("rho must map a lag array to an equally shaped array")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise ValueError("rho(0) must equal 1")
    if np.any(np.abs(corr) > 1.0 + 1e-12):
        raise ValueError("rho must take values in [-1, 1]")
    return corr


def _covariance_factor(params: LgcpParams) -> np.ndarray:
    """Factor F with F @ F.T = sigma2 * rho(|t_i - t_j|); raises with
    diagnostics when the matrix is not positive semidefinite."""
    n = params.n_bins
    if params.sigma2 == 0.0:
        return np.zeros((n, n))
    cov = params.sigma2 * _correlation_matrix(params)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # Singular but PSD matrices (e.g. constant correlation) land here; only a
    # genuinely negative spectrum is an error.
    eigvals, eigvecs = np.linalg.eigh(cov)
    floor = -1e-10 * max(eigvals.max(), 1.0)
    if eigvals.min() < floor:
        raise np.linalg.LinAlgError(
            "covariance is not positive semidefinite: min eigenvalue "
            f"{eigvals.min():.6e}, max eigenvalue {eigvals.max():.6e}, "
            f"size {n}x{n}"
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_lgcp_batch(params: LgcpParams, n_reps: int, seed: int) -> np.ndarray:
    """Sample ``n_reps`` independent count vectors, shape (n_reps, n_bins).

    The covariance factorization is computed once and reused, which keeps
    large replicate sweeps cheap.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    factor = _covariance_factor(params)
    rng = substream(seed)
    z = rng.standard_normal((n_reps, params.n_bins))
    log_field = z @ factor.T
    lam = params.mu[None, :] * np.exp(log_field)
    return rng.poisson(lam)


def sample_lgcp(params: LgcpParams, seed: int) -> CountSeries:
    """Sample one log-Gaussian Cox count series on the grid."""
    counts = sample_lgcp_batch(params, 1, seed)[0]
    return CountSeries(counts, params.grid)


def lgcp_moments(params: LgcpParams, t1: int, t2: int) -> LgcpMoments:
    """Exact mean/variance at bin ``t1`` and covariance between bins.

    When t1 == t2 the covariance requested is really the variance; the
    variance branch is returned and ``same_bin`` flags the substitution.
    """
    n = params.n_bins
    if not (0 <= t1 < n and 0 <= t2 < n):
        raise ValueError(f"bin indices must lie in [0, {n}), got ({t1}, {t2})")
    s2 = params.sigma2
    mu1 = params.mu[t1]
    mean = mu1 * math.exp(s2 / 2.0)
    variance = mean + (math.exp(s2) - 1.0) * math.exp(s2) * mu1**2
    if t1 == t2:
        logger.debug("covariance requested for identical bins; returning variance")
        return LgcpMoments(mean, variance, variance, same_bin=True)
    lag = abs(params.grid[t1] - params.grid[t2])
    corr = float(np.asarray(params.rho(np.asarray([lag])))[0])
    covariance = (math.exp(s2 * corr) - 1.0) * math.exp(s2) * mu1 * params.mu[t2]
    return LgcpMoments(mean, variance, covariance, same_bin=False)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def interval_from_dict(doc: dict) -> TimeInterval:
    return TimeInterval(float(doc["start"]), float(doc["end"]))


def correlation_from_dict(doc: dict) -> Correlation:
    return Correlation(doc["kind"], float(doc.get("scale", 1.0)))


def kernel_from_dict(doc: dict) -> KernelSpec:
    return KernelSpec(doc["kind"], float(doc["bandwidth"]))


def weight_from_dict(doc: dict) -> WeightSpec:
    kind = doc["kind"]
    if kind == "constant":
        return WeightSpec("constant", value=float(doc["value"]))
    if kind == "exponential":
        return WeightSpec("exponential", value=float(doc["mean"]))
    return WeightSpec("gamma", shape=float(doc["shape"]), scale=float(doc["scale"]))


def sncp_params_from_dict(doc: dict) -> SncpParams:
    return SncpParams(
        center_rate=float(doc["center_rate"]),
        gamma_dist=weight_from_dict(doc["gamma_dist"]),
        kernel=kernel_from_dict(doc["kernel"]),
    )


def lgcp_params_from_dict(doc: dict) -> LgcpParams:
    grid_doc = doc["grid"]
    if isinstance(grid_doc, dict):
        grid = grid_doc["start"] + grid_doc["step"] * np.arange(int(grid_doc["n"]))
    else:
        grid = np.asarray(grid_doc, dtype=float)
    return LgcpParams(
        mu=np.asarray(doc["mu"], dtype=float),
        sigma2=float(doc["sigma2"]),
        rho=correlation_from_dict(doc["rho"]),
        grid=grid,
    )


def user_spec_from_dict(doc: dict) -> UserProcessSpec:
    return UserProcessSpec(
        n_users=int(doc["n_users"]),
        per_user_rate=float(doc["per_user_rate"]),
        min_gap=float(doc.get("min_gap", 0.0)),
        cluster_excess=float(doc.get("cluster_excess", 0.0)),
    )


def write_pattern_csv(pattern: PointPattern, path) -> None:
    """Write a pattern as a one-column CSV with header ``time``."""
    with open(path, "w", newline="") as fh:
        fh.write("time\n")
        for t in pattern.times:
            fh.write(f"{float(t)!r}\n")


def write_series_csv(series: CountSeries, path) -> None:
    """Write a count series as CSV with header ``bin,count``."""
    with open(path, "w", newline="") as fh:
        fh.write("bin,count\n")
        for b, c in zip(series.grid, series.counts):
            fh.write(f"{float(b)!r},{int(c)}\n")
