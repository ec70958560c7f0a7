"""Optimal actions and bids against known utility/market-price laws.

Covers four solvers: the exhaustive argmax for discrete joint laws (with an
independence baseline that ignores the utility/market coupling), a bracketed
fixed-point solve for second-price bids, a safeguarded Newton root solve for
the first-price optimality gap under exponential market prices, and a
budget-pacing loop that rescales the bid multiplier until expected spend
matches budget.

Throughout, ``mu`` is the currency-to-utility scale and ``C = 1/mu`` the bid
multiplier. The first-price optimality gap for an opportunity with
conversion probability p, marginal price rate lam and conditional rate lam1
is

    g(a) = a + (e^{lam a} - 1)/lam - C p (lam1/lam) e^{(lam - lam1) a}

whose root is the optimal bid; g(0) = -C p lam1/lam < 0 always, so 0 is a
safe lower bracket end.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_ROOT_TOL = 1e-12
_SPA_TOL = 1e-10
_EXP_CAP = 700.0  # beyond this, e^{lam a} overflows; the gap is +inf there


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint law P(U=i, M=j) on an n x n grid of utility/price levels."""

    probs: np.ndarray
    n: int = field(init=False)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1]:
            raise ValueError("probs must be a square matrix")
        if probs.shape[0] < 1:
            raise ValueError("side length must be at least 1")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "n", probs.shape[0])

    def market_marginal(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def utility_mass_by_market(self) -> np.ndarray:
        """sum_u u P(U=u, M=m) for each m (joint mass, not conditional)."""
        return np.arange(self.n, dtype=float) @ self.probs


@dataclass(frozen=True)
class ExpMarketOpportunity:
    """Exponential market-price model with a conversion-conditional rate.

    The market price is Exp(lam) marginally and Exp(lam1) conditional on a
    conversion; delta = lam/lam1 summarizes the coupling (delta < 1 means
    prices run higher when the impression would convert).
    """

    p: float
    lam: float
    lam1: float
    delta: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.lam <= 0 or self.lam1 <= 0 or self.delta <= 0:
            raise ValueError("rates and delta must be positive")
        if not math.isclose(self.lam1, self.lam / self.delta, rel_tol=1e-12):
            raise ValueError("lam1 must equal lam/delta")

    @classmethod
    def from_delta(cls, p: float, lam: float, delta: float) -> "ExpMarketOpportunity":
        return cls(p, lam, lam / delta, delta)

    @classmethod
    def from_rates(cls, p: float, lam: float, lam1: float) -> "ExpMarketOpportunity":
        if lam1 <= 0:
            raise ValueError("rates and delta must be positive")
        return cls(p, lam, lam1, lam / lam1)


@dataclass(frozen=True)
class MultiplierState:
    """Outcome of budget pacing: multiplier, spend ratio and trajectory."""

    C: float
    r: float
    iterations: int
    converged: bool
    tolerance: float
    trajectory: tuple = ()

    def __post_init__(self) -> None:
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.converged and abs(self.r - 1.0) > self.tolerance:
            raise ValueError("converged state must satisfy |r - 1| <= tolerance")


class UniquenessCheck(NamedTuple):
    satisfied: bool
    clause: str | None


class NoRootInBracketError(ValueError):
    """Fixed-point gap has the same sign at both bracket ends."""

    def __init__(self, lo, hi, gap_lo, gap_hi):
        self.lo, self.hi, self.gap_lo, self.gap_hi = lo, hi, gap_lo, gap_hi
        super().__init__(
            f"no sign change in bracket: gap({lo}) = {gap_lo}, gap({hi}) = {gap_hi}"
        )


def _action_profits(joint: DiscreteJoint, spend, win, mu: float, use_joint: bool) -> np.ndarray:
    spend = np.asarray(spend, dtype=float)
    win = np.asarray(win, dtype=float)
    n = joint.n
    if spend.shape != (n, n) or win.shape != (n, n):
        raise ValueError("spend and win matrices must be n x n")
    if np.any(spend < 0):
        raise ValueError("spend must be nonnegative")
    if np.any((win < 0) | (win > 1)):
        raise ValueError("win entries must lie in [0, 1]")
    p_m = joint.market_marginal()
    if use_joint:
        u_mass = joint.utility_mass_by_market()
    else:
        u_mass = joint.utility_mass_by_market().sum() * p_m
    # profit per action: sum_m (u-mass_m - mu s(m,a) P(M=m)) w(m,a); a market
    # level with P(M=m) = 0 contributes 0 to both terms
    return u_mass @ win - mu * np.sum(p_m[:, None] * spend * win, axis=0)


def optimal_action_discrete(joint: DiscreteJoint, spend, win, mu: float) -> int:
    """Action index maximizing expected utility minus mu * expected spend.

    Ties break toward the smallest index (the lowest-spend action under
    monotone spend grids).
    """
    profits = _action_profits(joint, spend, win, mu, use_joint=True)
    return int(np.argmax(profits))


def optimal_action_discrete_independent(joint: DiscreteJoint, spend, win, mu: float) -> int:
    """Same pipeline with the marginal mean utility in place of the
    market-conditional one; the baseline an independence assumption yields."""
    profits = _action_profits(joint, spend, win, mu, use_joint=False)
    return int(np.argmax(profits))


def optimal_actions_discrete_batch(
    joints: np.ndarray, spend: np.ndarray, wins: np.ndarray, mu: float, dependency_aware: bool = True
) -> np.ndarray:
    """Vectorized argmax over a stack of joints (N,n,n) and win models."""
    joints = np.asarray(joints, dtype=float)
    wins = np.asarray(wins, dtype=float)
    spend = np.asarray(spend, dtype=float)
    p_m = joints.sum(axis=1)
    if dependency_aware:
        u_mass = np.einsum("u,kum->km", np.arange(joints.shape[1], dtype=float), joints)
    else:
        u_mass = np.einsum("u,kum->k", np.arange(joints.shape[1], dtype=float), joints)[
            :, None
        ] * p_m
    profits = np.einsum("km,kma->ka", u_mass, wins) - mu * np.einsum(
        "km,ma,kma->ka", p_m, spend, wins
    )
    return np.argmax(profits, axis=1)


def solve_spa(
    conditional_mean_u: Callable[[float], float], mu: float, bracket: tuple[float, float]
) -> float:
    """Second-price bid: the fixed point a = E[U | M=a] / mu.

    A constant conditional mean short-circuits to the scaled truthful bid
    u/mu exactly. Otherwise bracketed bisection drives the gap
    a - E[U|M=a]/mu below 1e-10 in magnitude.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    u_lo = conditional_mean_u(lo)
    u_hi = conditional_mean_u(hi)
    if u_lo == u_hi == conditional_mean_u(0.5 * (lo + hi)):
        return u_lo / mu
    gap_lo = lo - u_lo / mu
    gap_hi = hi - u_hi / mu
    if abs(gap_lo) <= _SPA_TOL:
        return lo
    if abs(gap_hi) <= _SPA_TOL:
        return hi
    if math.copysign(1.0, gap_lo) == math.copysign(1.0, gap_hi):
        raise NoRootInBracketError(lo, hi, gap_lo, gap_hi)
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        gap_mid = mid - conditional_mean_u(mid) / mu
        if abs(gap_mid) <= _SPA_TOL:
            return mid
        if math.copysign(1.0, gap_mid) == math.copysign(1.0, gap_lo):
            lo, gap_lo = mid, gap_mid
        else:
            hi = mid
    raise RuntimeError("bisection failed to meet the gap tolerance")


def _gap_terms(a, p, lam, lam1, C):
    grow_exp = lam * a
    decay_exp = (lam - lam1) * a
    with np.errstate(over="ignore"):
        grow = np.expm1(grow_exp) / lam
        tail = C * p * (lam1 / lam) * np.exp(decay_exp)
    return grow_exp, grow, tail


def _gap(a, p, lam, lam1, C):
    grow_exp, grow, tail = _gap_terms(a, p, lam, lam1, C)
    g = a + grow - tail
    return np.where(grow_exp > _EXP_CAP, np.inf, g)


def _gap_prime(a, p, lam, lam1, C):
    grow_exp = lam * a
    with np.errstate(over="ignore"):
        d = 1.0 + np.exp(grow_exp) - C * p * (lam1 / lam) * (lam - lam1) * np.exp(
            (lam - lam1) * a
        )
    return np.where(grow_exp > _EXP_CAP, np.inf, d)


def fpa_gap(opp: ExpMarketOpportunity, C: float, a) -> np.ndarray | float:
    """First-price optimality gap g(a); the optimal bid is its root."""
    out = _gap(np.asarray(a, dtype=float), opp.p, opp.lam, opp.lam1, C)
    return float(out) if np.ndim(a) == 0 else out


def _upper_bracket(p, lam, lam1, C):
    hi = 1.0 / lam
    for _ in range(200):
        unbrk = _gap(hi, p, lam, lam1, C) <= 0
        if not np.any(unbrk):
            return hi
        hi = np.where(unbrk, 2.0 * hi, hi)
    raise RuntimeError("could not bracket the first-price optimality root")


def _solve_fpa_batch(p, lam, lam1, C, max_iter: int = 300) -> np.ndarray:
    """Safeguarded Newton on the optimality gap, elementwise over arrays.

    Newton steps run from 0 with the analytic derivative; any step that
    leaves the current sign bracket, or lands where the derivative is
    nonpositive, falls back to bisection for that element. Convergence
    requires both |g| <= 1e-12 and a final step <= 1e-12.
    """
    p = np.asarray(p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    lam1 = np.asarray(lam1, dtype=float)
    g0 = -C * p * lam1 / lam
    assert np.all(g0 < 0), "gap at zero must be negative"
    lo = np.zeros(np.broadcast(p, lam, lam1).shape, dtype=float)
    hi = np.broadcast_to(_upper_bracket(p, lam, lam1, C), lo.shape).copy()
    a = lo.copy()
    g_a = np.broadcast_to(g0, lo.shape).copy()
    step = np.full(lo.shape, np.inf)
    done = np.zeros(lo.shape, dtype=bool)
    eps = np.finfo(float).eps
    for _ in range(max_iter):
        done |= (np.abs(g_a) <= _ROOT_TOL) & (step <= _ROOT_TOL)
        # a bracket collapsed to machine width cannot be improved further,
        # even when a steep gap keeps |g| above the nominal residual target
        done |= (hi - lo) <= 4.0 * eps * np.maximum(1.0, np.abs(a))
        if done.all():
            return a
        d = _gap_prime(a, p, lam, lam1, C)
        usable = np.isfinite(d) & (d > 0)
        cand = a - np.where(usable, g_a / np.where(usable, d, 1.0), 0.0)
        cand = np.where(usable & (cand > lo) & (cand < hi), cand, 0.5 * (lo + hi))
        step = np.where(done, step, np.abs(cand - a))
        a = np.where(done, a, cand)
        g_a = np.where(done, g_a, _gap(a, p, lam, lam1, C))
        lo = np.where(~done & (g_a <= 0), a, lo)
        hi = np.where(~done & (g_a > 0), a, hi)
    raise RuntimeError(
        f"first-price root solve did not converge; worst residual "
        f"{np.abs(g_a[~done]).max():.3e}"
    )


def _refine_bisection(p, lam, lam1, C, lo, hi):
    g_lo = _gap(lo, p, lam, lam1, C)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        g_mid = _gap(mid, p, lam, lam1, C)
        if abs(g_mid) <= _ROOT_TOL or (hi - lo) <= _ROOT_TOL * max(1.0, mid):
            return mid
        if (g_mid <= 0) == (g_lo <= 0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _certified_scan_limit(p, lam, lam1, C, hi0: float) -> float:
    """Point beyond which the gap is provably positive.

    The ratio of the growth term (e^{lam a} - 1)/lam to the subtracted tail
    K e^{(lam-lam1) a} equals (1 - e^{-lam a}) e^{lam1 a} / (lam K), which is
    increasing in a. Once the growth term reaches twice the tail, g > tail
    > 0 from that point on, so no root can lie beyond it.
    """
    log_k = math.log(C * p * lam1 / lam)
    hi = max(hi0, 1.0 / lam)
    for _ in range(400):
        z = lam * hi
        log_growth = z + math.log1p(-math.exp(-min(z, _EXP_CAP))) - math.log(lam)
        log_tail = log_k + (lam - lam1) * hi
        if log_growth >= math.log(2.0) + log_tail:
            return hi
        hi *= 2.0
    raise RuntimeError("could not certify an upper limit for the root scan")


def _scan_smallest_root(p, lam, lam1, C, newton_root: float) -> float:
    """Sign-change scan on a geometric grid, refining the first bracket.

    Runs only when the sufficient uniqueness conditions fail. More than one
    sign change means several stationary bids; the smallest (most
    conservative) one is returned with a warning.
    """
    hi = _certified_scan_limit(p, lam, lam1, C, float(_upper_bracket(p, lam, lam1, C)))
    grid = np.concatenate([[0.0], np.geomspace(hi * 1e-12, hi, 2047)])
    signs = _gap(grid, p, lam, lam1, C) > 0
    flips = np.nonzero(signs[1:] != signs[:-1])[0]
    if flips.size <= 1:
        return newton_root
    warnings.warn(
        f"optimality gap has {flips.size} sign changes; returning the smallest root",
        stacklevel=3,
    )
    i = flips[0]
    return float(_refine_bisection(p, lam, lam1, C, grid[i], grid[i + 1]))


def check_uniqueness_conditions(opp: ExpMarketOpportunity, mu: float) -> UniquenessCheck:
    """Sufficient conditions for a unique first-price stationary bid.

    Either the conversion-conditional rate dominates the marginal one
    (lam1 > lam), or lam * u / (2 mu) < 1 with u the conversion probability.
    A False result does not imply multiple roots; the test is one-sided.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if opp.lam1 > opp.lam:
        return UniquenessCheck(True, "lam1 > lam")
    if opp.lam * opp.p / (2.0 * mu) < 1.0:
        return UniquenessCheck(True, "lam * u / (2 mu) < 1")
    return UniquenessCheck(False, None)


def solve_fpa_exponential(opp: ExpMarketOpportunity, C: float) -> float:
    """Optimal first-price bid for one exponential-market opportunity."""
    if C <= 0:
        raise ValueError("C must be positive")
    root = float(_solve_fpa_batch(opp.p, opp.lam, opp.lam1, C))
    if not check_uniqueness_conditions(opp, 1.0 / C).satisfied:
        root = _scan_smallest_root(opp.p, opp.lam, opp.lam1, C, root)
    return root


def _landscape_bids(p, lam, lam1_effective, C):
    bids = _solve_fpa_batch(p, lam, lam1_effective, C)
    nonunique = ~((lam1_effective > lam) | (lam * p * C / 2.0 < 1.0))
    for i in np.nonzero(nonunique)[0]:
        bids[i] = _scan_smallest_root(p[i], lam[i], lam1_effective[i], C, bids[i])
    return bids


def expected_spend_exponential(lam, bids) -> float:
    """Closed-form total expected first-price spend, sum of x(1 - e^{-lam x})."""
    lam = np.asarray(lam, dtype=float)
    bids = np.asarray(bids, dtype=float)
    return float(np.sum(bids * -np.expm1(-lam * bids)))


def tune_multiplier(
    landscape,
    budget: float,
    C0: float = 1.0,
    delta: float = 0.05,
    max_iter: int = 50,
    dependency_aware: bool = True,
    damping: float = 1.0,
) -> tuple[MultiplierState, float]:
    """Rescale the bid multiplier until expected spend matches the budget.

    Each pass solves every opportunity's first-price bid at the current C,
    computes the spend ratio r = S/budget and updates C <- C / r^(damping/2)
    (damping 1 is the plain square-root update). When dependency_aware is
    false the bids come from the formula with lam1 replaced by lam, but the
    returned expected conversions sum p_i (1 - e^{-lam1 x_i}) always uses
    the true conditional rates.

    Zero expected spend at the initial C doubles C up to 60 times before
    giving up; non-convergence within max_iter returns a non-converged state
    carrying the full (C, S, r) trajectory.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if C0 <= 0:
        raise ValueError("C0 must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    p = np.asarray(landscape.p, dtype=float)
    lam = np.asarray(landscape.lam, dtype=float)
    lam1 = np.asarray(landscape.lam1, dtype=float)
    lam1_eff = lam1 if dependency_aware else lam

    C = float(C0)
    trajectory: list[tuple[float, float, float]] = []
    converged = False
    iterations = 0
    r = math.inf
    bids = np.zeros_like(p)
    for _ in range(max_iter):
        bids = _landscape_bids(p, lam, lam1_eff, C)
        S = expected_spend_exponential(lam, bids)
        doublings = 0
        while S == 0.0:
            if doublings >= 60:
                raise RuntimeError("expected spend stayed zero after 60 doublings of C")
            C *= 2.0
            doublings += 1
            bids = _landscape_bids(p, lam, lam1_eff, C)
            S = expected_spend_exponential(lam, bids)
        r = S / budget
        iterations += 1
        trajectory.append((C, S, r))
        if abs(r - 1.0) <= delta:
            converged = True
            break
        C = C / r ** (0.5 * damping)
    if not converged:
        logger.warning(
            "multiplier tuning did not converge in %d iterations (last r=%.6g)",
            iterations,
            r,
        )
    conversions = float(np.sum(p * -np.expm1(-lam1 * bids)))
    state = MultiplierState(
        C=trajectory[-1][0],
        r=r,
        iterations=iterations,
        converged=converged,
        tolerance=delta,
        trajectory=tuple(trajectory),
    )
    return state, conversions


def write_tuning_trace(trajectory: Sequence[tuple[float, float, float]], path) -> None:
    """Emit a pacing trajectory as CSV with columns iter,C,S,r."""
    with open(path, "w") as fh:
        fh.write("iter,C,S,r\n")
        for i, (c, s, r) in enumerate(trajectory):
            fh.write(f"{i},{c!r},{s!r},{r!r}\n")
