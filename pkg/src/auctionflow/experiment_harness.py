"""Synthetic landscape generation and the three experiment families.

Landscape generators draw per-opportunity parameters from counter-based
streams keyed (seed, opportunity index), so enlarging a landscape never
reshuffles earlier opportunities. The experiment runners sweep parameter
grids deterministically and emit plain rows; all summary ratios come from
exact expected values, so dominance properties hold deterministically
rather than statistically.

Experiment families:
  profit_ratio      discrete landscapes, dependency-aware vs marginal action
  conversion_ratio  exponential landscapes, budget-paced bidding both ways
  poisson_check     user-superposition counts vs matched Poisson references
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from ._rng import substream
from .bid_optimizer import DiscreteJoint, ExpMarketOpportunity, tune_multiplier
from .point_process import TimeInterval, UserProcessSpec, sample_user_superposition
from .poisson_diagnostics import (
    CountMatrix,
    ks_distance,
    log_mean_variance_ratio,
    qq_against_poisson,
    qq_central_slope,
)

logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("poisson_check", "profit_ratio", "conversion_ratio")


@dataclass(frozen=True)
class DiscreteLandscape:
    """N pre-drawn discrete opportunities sharing one spend grid.

    joints: (N, n, n) utility/market joints, each summing to 1.
    wins: (N, n, n) win probabilities w(m, a), frozen at generation so every
    strategy faces the identical landscape. spend: shared (n, n) grid with
    s(m, a) = a + 1.
    """

    joints: np.ndarray
    wins: np.ndarray
    spend: np.ndarray
    alpha_dep: float
    seed: int

    def __post_init__(self) -> None:
        joints = np.asarray(self.joints, dtype=float)
        wins = np.asarray(self.wins, dtype=float)
        spend = np.asarray(self.spend, dtype=float)
        if joints.ndim != 3 or joints.shape[1] != joints.shape[2]:
            raise ValueError("joints must be a stack of square matrices")
        n = joints.shape[1]
        if wins.shape != joints.shape:
            raise ValueError("wins must match joints in shape")
        if spend.shape != (n, n):
            raise ValueError("spend must be n x n")
        if np.any(joints < 0) or np.any(np.abs(joints.sum(axis=(1, 2)) - 1.0) > 1e-9):
            raise ValueError("each joint must be a probability matrix")
        if np.any((wins < 0) | (wins > 1)):
            raise ValueError("win entries must lie in [0, 1]")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "wins", wins)
        object.__setattr__(self, "spend", spend)

    @property
    def n(self) -> int:
        return self.joints.shape[1]

    @property
    def n_opportunities(self) -> int:
        return self.joints.shape[0]

    @property
    def win_matrices(self) -> np.ndarray:
        return self.wins

    @property
    def spend_matrix(self) -> np.ndarray:
        return self.spend

    def opportunity(self, k: int) -> DiscreteJoint:
        return DiscreteJoint(self.joints[k])


@dataclass(frozen=True)
class ExpGenParams:
    beta_a: float
    beta_b: float
    logdelta_mean: float
    logdelta_sd: float
    gamma_as_rate: bool


@dataclass(frozen=True)
class ExpLandscape:
    """N pre-drawn exponential-market opportunities as parallel vectors."""

    p: np.ndarray
    lam: np.ndarray
    lam1: np.ndarray
    delta: np.ndarray
    gen_params: ExpGenParams
    seed: int

    def __post_init__(self) -> None:
        arrays = [np.asarray(getattr(self, f), dtype=float) for f in ("p", "lam", "lam1", "delta")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("p, lam, lam1, delta must be equal-length vectors")
        p, lam, lam1, delta = arrays
        if np.any((p <= 0) | (p >= 1)):
            raise ValueError("p must lie in (0, 1)")
        if np.any(lam <= 0) or np.any(lam1 <= 0) or np.any(delta <= 0):
            raise ValueError("rates and delta must be positive")
        if np.any(np.abs(lam1 - lam / delta) > 1e-12 * np.maximum(lam1, 1.0)):
            raise ValueError("lam1 must equal lam/delta")
        for name, arr in zip(("p", "lam", "lam1", "delta"), arrays):
            object.__setattr__(self, name, arr)

    @property
    def n_opportunities(self) -> int:
        return self.p.size

    def opportunity(self, k: int) -> ExpMarketOpportunity:
        return ExpMarketOpportunity(
            float(self.p[k]), float(self.lam[k]), float(self.lam1[k]), float(self.delta[k])
        )


@dataclass(frozen=True)
class StratumSpec:
    """One synthetic user population for the Poisson-ness experiment."""

    name: str
    n_users: int
    per_user_rate: float
    min_gap: float = 0.0
    cluster_excess: float = 0.0

    def __post_init__(self) -> None:
        if not self.name or "," in self.name:
            raise ValueError("stratum name must be nonempty and comma-free")

    def to_user_spec(self) -> UserProcessSpec:
        return UserProcessSpec(
            n_users=self.n_users,
            per_user_rate=self.per_user_rate,
            min_gap=self.min_gap,
            cluster_excess=self.cluster_excess,
        )


_DEFAULT_STRATA = (
    StratumSpec("mild", 60, 0.008, 5.0, 0.3),
    StratumSpec("moderate", 60, 0.008, 5.0, 1.0),
    StratumSpec("strong", 60, 0.008, 5.0, 2.0),
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Grids, seeds and sizes for one experiment family."""

    kind: str
    seeds: tuple = (0,)
    output_path: str | None = None
    # discrete profit-ratio grids
    mus: tuple = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)
    alpha_deps: tuple = (0.0, 0.5, 1.0, 2.0, 5.0)
    n_levels: int = 20
    n_opportunities: int = 10000
    # exponential conversion-ratio grids
    budgets: tuple = (0.1, 1.0)
    logdelta_means: tuple = (0.0, 0.3)
    logdelta_sds: tuple = (0.0, 0.4)
    exp_n_opportunities: int = 10000
    pacing_tolerance: float = 1e-3
    pacing_max_iter: int = 200
    initial_multiplier: float = 1.0
    gamma_as_rate: bool = False
    # poisson-check design
    strata: tuple = _DEFAULT_STRATA
    granularities: tuple = (3600.0, 60.0, 1.0)
    horizon: float = 14400.0
    n_replicates: int = 100

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"kind must be one of {EXPERIMENT_KINDS}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.kind == "profit_ratio" and (not self.mus or not self.alpha_deps):
            raise ValueError("profit_ratio requires nonempty mus and alpha_deps")
        if self.kind == "conversion_ratio":
            if not self.budgets or not self.logdelta_means or not self.logdelta_sds:
                raise ValueError("conversion_ratio requires nonempty grids")
        if self.kind == "poisson_check":
            if not self.strata or not self.granularities:
                raise ValueError("poisson_check requires strata and granularities")
            if self.n_replicates < 2:
                raise ValueError("n_replicates must be at least 2")
            for g in self.granularities:
                if g <= 0 or abs(self.horizon / g - round(self.horizon / g)) > 1e-9:
                    raise ValueError("each granularity must evenly divide the horizon")

    def to_dict(self) -> dict:
        doc = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "strata":
                value = [vars(s) for s in value]
            elif isinstance(value, tuple):
                value = list(value)
            doc[f.name] = value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(doc)
        if "strata" in kwargs:
            strata = []
            for entry in kwargs["strata"]:
                extra = set(entry) - {"name", "n_users", "per_user_rate", "min_gap", "cluster_excess"}
                if extra:
                    raise ValueError(f"unknown stratum fields: {sorted(extra)}")
                strata.append(StratumSpec(**entry))
            kwargs["strata"] = tuple(strata)
        for name, value in kwargs.items():
            if isinstance(value, list):
                kwargs[name] = tuple(value)
        return cls(**kwargs)


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return ExperimentConfig.from_dict(doc)


def generate_discrete_landscape(n: int, N: int, alpha_dep: float, seed: int) -> DiscreteLandscape:
    """Draw N joint laws with a diagonal dependency boost and frozen wins.

    Each joint is Unif(0,1) cell noise plus alpha_dep * n on the diagonal,
    normalized to total mass 1. Win probabilities are one Beta(a+1,
    E[U|M=m]+1) draw per (opportunity, m, a), taken after normalization.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if N < 1:
        raise ValueError("N must be at least 1")
    if alpha_dep < 0:
        raise ValueError("alpha_dep must be nonnegative")
    joints = np.empty((N, n, n))
    wins = np.empty((N, n, n))
    boost = alpha_dep * n * np.eye(n)
    u_vals = np.arange(n, dtype=float)
    win_alpha = np.arange(1.0, n + 1.0)[None, :]  # a + 1 along action columns
    for k in range(N):
        rng = substream(seed, k)
        raw = rng.uniform(size=(n, n)) + boost
        joint = raw / raw.sum()
        cond_mean = (u_vals @ joint) / joint.sum(axis=0)
        joints[k] = joint
        wins[k] = rng.beta(win_alpha, (cond_mean + 1.0)[:, None])
    spend = np.tile(np.arange(1.0, n + 1.0), (n, 1))
    return DiscreteLandscape(joints, wins, spend, float(alpha_dep), int(seed))


def generate_exponential_landscape(
    N: int,
    logdelta_mean: float,
    logdelta_sd: float,
    seed: int,
    gamma_as_rate: bool = False,
) -> ExpLandscape:
    """Draw N exponential-market opportunities.

    p ~ Beta(2, 1000); lam ~ Gamma(shape 1, scale 1/p) so E[lam | p] = 1/p
    (set gamma_as_rate for the scale-p reading, mean p); log delta ~
    Normal(logdelta_mean, logdelta_sd^2); lam1 = lam/delta.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if logdelta_sd < 0:
        raise ValueError("logdelta_sd must be nonnegative")
    p = np.empty(N)
    lam = np.empty(N)
    logd = np.empty(N)
    for k in range(N):
        rng = substream(seed, k)
        p[k] = rng.beta(2.0, 1000.0)
        lam[k] = rng.gamma(1.0, p[k] if gamma_as_rate else 1.0 / p[k])
        logd[k] = rng.normal(logdelta_mean, logdelta_sd)
    delta = np.exp(logd)
    params = ExpGenParams(2.0, 1000.0, float(logdelta_mean), float(logdelta_sd), gamma_as_rate)
    return ExpLandscape(p, lam, lam / delta, delta, params, int(seed))


class ProfitTerms(NamedTuple):
    """Per-(opportunity, action) pieces of expected profit.

    True expected profit of action a on opportunity k under scale mu is
    utility_joint[k, a] - mu * spend_cost[k, a]; utility_marginal swaps in
    the marginal mean utility (the independence baseline's objective).
    """

    utility_joint: np.ndarray
    utility_marginal: np.ndarray
    spend_cost: np.ndarray


def discrete_profit_terms(landscape: DiscreteLandscape) -> ProfitTerms:
    joints, wins, spend = landscape.joints, landscape.wins, landscape.spend
    u_vals = np.arange(joints.shape[1], dtype=float)
    p_m = joints.sum(axis=1)
    u_mass = np.einsum("u,kum->km", u_vals, joints)
    eu = u_mass.sum(axis=1)
    utility_joint = np.einsum("km,kma->ka", u_mass, wins)
    utility_marginal = np.einsum("km,kma->ka", eu[:, None] * p_m, wins)
    spend_cost = np.einsum("km,ma,kma->ka", p_m, spend, wins)
    return ProfitTerms(utility_joint, utility_marginal, spend_cost)


@dataclass(frozen=True)
class ProfitRow:
    mu: float
    alpha_dep: float
    seed: int
    profit_dep: float
    profit_indep: float
    ratio: float
    flagged: bool

    def __post_init__(self) -> None:
        if self.flagged != (self.profit_indep <= 0.0):
            raise ValueError("flagged must mark exactly the nonpositive-baseline rows")


@dataclass(frozen=True)
class ConversionRow:
    budget: float
    logdelta_mean: float
    logdelta_sd: float
    seed: int
    conv_dep: float
    conv_indep: float
    ratio: float
    converged: bool


@dataclass(frozen=True)
class PoissonCheckRow:
    granularity: float
    stratum: str
    seed: int
    statistic: float
    statistic_se: float
    reference_statistic: float
    reference_se: float
    qq_slope: float
    ks_distance: float
    n_windows: int


def run_profit_ratio_experiment(config: ExperimentConfig, jobs: int = 1) -> list[ProfitRow]:
    """Dependency-aware vs marginal action choice over the mu x alpha grid.

    One landscape per (alpha_dep, seed); both strategies are evaluated
    exactly against the true joints. A nonpositive baseline profit makes the
    ratio meaningless, so those rows carry the profit difference instead and
    are flagged.
    """
    if config.kind != "profit_ratio":
        raise ValueError("config.kind must be profit_ratio")

    def cell(args):
        alpha, seed = args
        land = generate_discrete_landscape(
            config.n_levels, config.n_opportunities, alpha, seed
        )
        terms = discrete_profit_terms(land)
        out = {}
        for mu in config.mus:
            true_profit = terms.utility_joint - mu * terms.spend_cost
            baseline_objective = terms.utility_marginal - mu * terms.spend_cost
            a_dep = np.argmax(true_profit, axis=1)
            a_ind = np.argmax(baseline_objective, axis=1)
            profit_dep = float(np.take_along_axis(true_profit, a_dep[:, None], 1).sum())
            profit_ind = float(np.take_along_axis(true_profit, a_ind[:, None], 1).sum())
            if profit_ind <= 0.0:
                out[mu] = ProfitRow(
                    mu, alpha, seed, profit_dep, profit_ind, profit_dep - profit_ind, True
                )
            else:
                out[mu] = ProfitRow(
                    mu, alpha, seed, profit_dep, profit_ind, profit_dep / profit_ind, False
                )
        return args, out

    cells = [(alpha, seed) for alpha in config.alpha_deps for seed in config.seeds]
    results = dict(_run_cells(cell, cells, jobs))
    return [
        results[(alpha, seed)][mu]
        for mu in config.mus
        for alpha in config.alpha_deps
        for seed in config.seeds
    ]


def run_conversion_ratio_experiment(config: ExperimentConfig, jobs: int = 1) -> list[ConversionRow]:
    """Budget-paced conversions with and without the dependency term.

    Both pacing runs target the same budget; the ratio uses exact expected
    conversions at the converged multipliers. Rows where either run failed
    to converge carry ratio = nan and converged = False.
    """
    if config.kind != "conversion_ratio":
        raise ValueError("config.kind must be conversion_ratio")

    def cell(args):
        mean, sd, seed = args
        land = generate_exponential_landscape(
            config.exp_n_opportunities, mean, sd, seed, config.gamma_as_rate
        )
        out = {}
        for budget in config.budgets:
            rows = {}
            state_dep, conv_dep = tune_multiplier(
                land,
                budget,
                C0=config.initial_multiplier,
                delta=config.pacing_tolerance,
                max_iter=config.pacing_max_iter,
            )
            state_ind, conv_ind = tune_multiplier(
                land,
                budget,
                C0=config.initial_multiplier,
                delta=config.pacing_tolerance,
                max_iter=config.pacing_max_iter,
                dependency_aware=False,
            )
            converged = state_dep.converged and state_ind.converged
            ratio = conv_dep / conv_ind if converged else math.nan
            out[budget] = ConversionRow(
                budget, mean, sd, seed, conv_dep, conv_ind, ratio, converged
            )
        return args, out

    cells = [
        (mean, sd, seed)
        for mean in config.logdelta_means
        for sd in config.logdelta_sds
        for seed in config.seeds
    ]
    results = dict(_run_cells(cell, cells, jobs))
    return [
        results[(mean, sd, seed)][budget]
        for budget in config.budgets
        for mean in config.logdelta_means
        for sd in config.logdelta_sds
        for seed in config.seeds
    ]


def _run_cells(fn, cells, jobs):
    if jobs <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cells))


def _replicate_seed(seed: int, stratum_index: int, rep: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(101, stratum_index, rep))
    return int(ss.generate_state(1, np.uint64)[0])


def _per_replicate_log_ratios(counts: np.ndarray) -> np.ndarray:
    """ln(mean/variance) per replicate row; degenerate rows dropped."""
    stats = log_mean_variance_ratio(CountMatrix(counts))
    return stats.values


def run_poisson_check_experiment(
    config: ExperimentConfig,
) -> tuple[list[PoissonCheckRow], dict[tuple[int, float, str], np.ndarray]]:
    """Count-dispersion diagnostics across window granularities.

    Each replicate simulates every stratum's user superposition over the
    horizon once; counts are re-binned at each granularity, so coarser and
    finer views describe the same underlying points. References are matched
    homogeneous Poisson draws with the plug-in per-window mean. Returns
    per-(seed, granularity, stratum) rows plus QQ pairs for plotting.
    """
    if config.kind != "poisson_check":
        raise ValueError("config.kind must be poisson_check")
    interval = TimeInterval(0.0, config.horizon)
    rows: list[PoissonCheckRow] = []
    qq_tables: dict[tuple[int, float, str], np.ndarray] = {}
    for seed in config.seeds:
        for s_idx, stratum in enumerate(config.strata):
            spec = stratum.to_user_spec()
            patterns = [
                sample_user_superposition(spec, interval, _replicate_seed(seed, s_idx, rep))
                for rep in range(config.n_replicates)
            ]
            for g_idx, gran in enumerate(config.granularities):
                edges = np.arange(0.0, config.horizon + 0.5 * gran, gran)
                counts = np.stack(
                    [np.histogram(p.times, bins=edges)[0] for p in patterns]
                )
                lam_hat = counts.mean()
                ref_rng = substream(seed, 103, s_idx, g_idx)
                ref_counts = ref_rng.poisson(lam_hat, size=counts.shape)
                stat_vals = _per_replicate_log_ratios(counts)
                ref_vals = _per_replicate_log_ratios(ref_counts)
                if stat_vals.size < counts.shape[0]:
                    logger.info(
                        "poisson_check: stratum %s at granularity %s dropped %d degenerate replicates",
                        stratum.name,
                        gran,
                        counts.shape[0] - stat_vals.size,
                    )
                pairs = qq_against_poisson(counts.ravel(), ref_counts.ravel())
                lo, hi_q = np.quantile(ref_counts, [0.1, 0.9])
                try:
                    slope = qq_central_slope(pairs, window=(lo, hi_q))
                except ValueError:
                    slope = math.nan
                rows.append(
                    PoissonCheckRow(
                        granularity=float(gran),
                        stratum=stratum.name,
                        seed=int(seed),
                        statistic=_mean_or_nan(stat_vals),
                        statistic_se=_se_or_nan(stat_vals),
                        reference_statistic=_mean_or_nan(ref_vals),
                        reference_se=_se_or_nan(ref_vals),
                        qq_slope=slope,
                        ks_distance=ks_distance(counts.ravel(), ref_counts.ravel()),
                        n_windows=int(counts.size),
                    )
                )
                stride = max(1, pairs.shape[0] // 512)
                qq_tables[(int(seed), float(gran), stratum.name)] = pairs[::stride]
    return rows, qq_tables


def _mean_or_nan(values: np.ndarray) -> float:
    return float(values.mean()) if values.size else math.nan


def _se_or_nan(values: np.ndarray) -> float:
    if values.size < 2:
        return math.nan
    return float(values.std(ddof=1) / math.sqrt(values.size))


def profit_ratio_summary(rows: list[ProfitRow]) -> dict[tuple[float, float], float]:
    """Mean unflagged ratio per (mu, alpha_dep) cell."""
    groups: dict[tuple[float, float], list[float]] = {}
    for row in rows:
        if not row.flagged:
            groups.setdefault((row.mu, row.alpha_dep), []).append(row.ratio)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}


def conversion_ratio_summary(rows: list[ConversionRow]) -> dict[tuple[float, float, float], float]:
    """Mean converged ratio per (budget, logdelta_mean, logdelta_sd) cell."""
    groups: dict[tuple[float, float, float], list[float]] = {}
    for row in rows:
        if row.converged:
            groups.setdefault((row.budget, row.logdelta_mean, row.logdelta_sd), []).append(row.ratio)
    return {key: float(np.mean(vals)) for key, vals in groups.items()}


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_landscape(landscape, path) -> None:
    """Persist a landscape to .npz, written atomically."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        if isinstance(landscape, DiscreteLandscape):
            np.savez(
                fh,
                kind="discrete",
                joints=landscape.joints,
                wins=landscape.wins,
                spend=landscape.spend,
                alpha_dep=landscape.alpha_dep,
                seed=landscape.seed,
            )
        elif isinstance(landscape, ExpLandscape):
            np.savez(
                fh,
                kind="exponential",
                p=landscape.p,
                lam=landscape.lam,
                lam1=landscape.lam1,
                delta=landscape.delta,
                gen_params=json.dumps(vars(landscape.gen_params)),
                seed=landscape.seed,
            )
        else:
            raise TypeError(f"cannot save landscape of type {type(landscape).__name__}")
    os.replace(tmp, path)


def load_landscape(path):
    """Load a landscape saved by save_landscape."""
    with np.load(path, allow_pickle=False) as dat:
        kind = str(dat["kind"])
        if kind == "discrete":
            return DiscreteLandscape(
                dat["joints"], dat["wins"], dat["spend"],
                float(dat["alpha_dep"]), int(dat["seed"]),
            )
        if kind == "exponential":
            params = ExpGenParams(**json.loads(str(dat["gen_params"])))
            return ExpLandscape(
                dat["p"], dat["lam"], dat["lam1"], dat["delta"], params, int(dat["seed"])
            )
    raise ValueError(f"unrecognized landscape kind {kind!r} in {path}")


PROFIT_HEADER = "mu,alpha_dep,seed,profit_dep,profit_indep,ratio"
CONVERSION_HEADER = "budget,logdelta_mean,logdelta_sd,seed,conv_dep,conv_indep,ratio"
POISSON_HEADER = (
    "granularity,stratum,seed,statistic,statistic_se,reference_statistic,"
    "reference_se,qq_slope,ks_distance,n_windows"
)


def write_profit_csv(rows: list[ProfitRow], path) -> None:
    lines = [PROFIT_HEADER]
    for r in rows:
        lines.append(
            f"{r.mu!r},{r.alpha_dep!r},{r.seed},{r.profit_dep!r},{r.profit_indep!r},{r.ratio!r}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def read_profit_csv(path) -> list[ProfitRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != PROFIT_HEADER:
            raise ValueError(f"unexpected profit table header: {header}")
        for line in fh:
            mu, alpha, seed, dep, ind, ratio = line.strip().split(",")
            ind_f = float(ind)
            rows.append(
                ProfitRow(
                    float(mu), float(alpha), int(seed), float(dep), ind_f, float(ratio),
                    flagged=ind_f <= 0.0,
                )
            )
    return rows


def write_conversion_csv(rows: list[ConversionRow], path) -> None:
    lines = [CONVERSION_HEADER]
    for r in rows:
        lines.append(
            f"{r.budget!r},{r.logdelta_mean!r},{r.logdelta_sd!r},{r.seed},"
            f"{r.conv_dep!r},{r.conv_indep!r},{r.ratio!r}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def read_conversion_csv(path) -> list[ConversionRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CONVERSION_HEADER:
            raise ValueError(f"unexpected conversion table header: {header}")
        for line in fh:
            budget, mean, sd, seed, dep, ind, ratio = line.strip().split(",")
            ratio_f = float(ratio)
            rows.append(
                ConversionRow(
                    float(budget), float(mean), float(sd), int(seed), float(dep),
                    float(ind), ratio_f, converged=not math.isnan(ratio_f),
                )
            )
    return rows


def write_poisson_csv(rows: list[PoissonCheckRow], path) -> None:
    lines = [POISSON_HEADER]
    for r in rows:
        lines.append(
            f"{r.granularity!r},{r.stratum},{r.seed},{r.statistic!r},{r.statistic_se!r},"
            f"{r.reference_statistic!r},{r.reference_se!r},{r.qq_slope!r},"
            f"{r.ks_distance!r},{r.n_windows}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def read_poisson_csv(path) -> list[PoissonCheckRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != POISSON_HEADER:
            raise ValueError(f"unexpected poisson table header: {header}")
        for line in fh:
            gran, stratum, seed, stat, stat_se, ref, ref_se, slope, ks, n = line.strip().split(",")
            rows.append(
                PoissonCheckRow(
                    float(gran), stratum, int(seed), float(stat), float(stat_se),
                    float(ref), float(ref_se), float(slope), float(ks), int(n),
                )
            )
    return rows


def write_plot_data(triples, path) -> None:
    """Emit (x, y, series) rows for external plotting tools."""
    lines = ["x,y,series"]
    for x, y, series in triples:
        if "," in str(series):
            raise ValueError("series labels must be comma-free")
        lines.append(f"{float(x)!r},{float(y)!r},{series}")
    _atomic_write(path, "\n".join(lines) + "\n")


def qq_plot_triples(qq_tables: dict[tuple[int, float, str], np.ndarray]):
    """Flatten QQ tables into (x, y, series) triples."""
    out = []
    for (seed, gran, stratum), pairs in qq_tables.items():
        label = f"seed{seed}|g{gran:g}|{stratum}"
        for ref_q, act_q in np.asarray(pairs):
            out.append((float(ref_q), float(act_q), label))
    return out
