"""Opportunity data model and exact/simulated auction totals.

An opportunity carries a full context, its player-visible projection, a
utility and a market condition (highest competing price). Strategies map the
observable side to an action; totals accumulate spend, utility and win
counts. ``expected_totals`` evaluates closed-form expectations for the two
landscape families used by the experiments; ``simulate_auctions`` draws
realized outcomes with per-opportunity random streams.

Landscapes are consumed structurally: a discrete landscape exposes
``joints`` (N,n,n), ``wins`` (N,n,n) and ``spend`` (n,n) arrays; an
exponential-market landscape exposes ``p``, ``lam`` and ``lam1`` vectors.
This keeps the evaluation engine independent of the generator module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._rng import substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Opportunity:
    """One realized bid opportunity."""

    context: tuple
    observable_context: tuple
    utility: float
    market_condition: float

    def __post_init__(self) -> None:
        if self.market_condition < 0:
            raise ValueError("market_condition must be nonnegative")

    @classmethod
    def from_context(
        cls,
        context: Sequence,
        project: Callable[[tuple], tuple],
        utility: float,
        market_condition: float,
    ) -> "Opportunity":
        ctx = tuple(context)
        return cls(ctx, tuple(project(ctx)), utility, market_condition)


@dataclass(frozen=True)
class AuctionRules:
    """Win-probability and spend-on-win functions of (market, action)."""

    kind: str
    win_fn: Callable[[float, float], float]
    spend_fn: Callable[[float, float], float]

    @classmethod
    def first_price(cls) -> "AuctionRules":
        # ties count as wins: the win indicator is m <= a
        return cls("first_price", lambda m, a: float(m <= a), lambda m, a: a)

    @classmethod
    def second_price(cls) -> "AuctionRules":
        return cls("second_price", lambda m, a: float(m <= a), lambda m, a: m)

    @classmethod
    def custom(cls, win_fn, spend_fn) -> "AuctionRules":
        return cls("custom", win_fn, spend_fn)


@dataclass(frozen=True)
class Strategy:
    """Deterministic action as a function of the observable context.

    For landscape evaluation the observable context is the opportunity index
    (per-opportunity parameters are known to the player), so ``action_fn``
    maps index k to either a discrete action index or a bid price.
    """

    action_fn: Callable[[int], float]

    @classmethod
    def from_actions(cls, actions) -> "Strategy":
        arr = np.asarray(actions)

        def lookup(k: int):
            return arr[k]

        return cls(lookup)

    def actions_for(self, n: int) -> np.ndarray:
        return np.asarray([self.action_fn(k) for k in range(n)])


@dataclass(frozen=True)
class Totals:
    total_spending: float
    total_utility: float
    total_wins: int


@dataclass(frozen=True)
class ScaleAndBudget:
    """Utility-per-currency scale mu (0 = unconstrained) and budget."""

    mu: float
    budget: float

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.budget <= 0:
            raise ValueError("budget must be positive")


def _discrete_arrays(landscape):
    joints = np.asarray(landscape.joints, dtype=float)
    wins = np.asarray(landscape.wins, dtype=float)
    spend = np.asarray(landscape.spend, dtype=float)
    return joints, wins, spend


def _is_discrete(landscape) -> bool:
    if hasattr(landscape, "joints"):
        return True
    if hasattr(landscape, "lam"):
        return False
    raise TypeError(
        "landscape must expose either discrete arrays (joints/wins/spend) "
        "or exponential-market vectors (p/lam/lam1)"
    )


def _discrete_action_indices(actions: np.ndarray, n: int) -> np.ndarray:
    acts = np.asarray(actions)
    if not np.all(acts == np.floor(acts)):
        raise ValueError("discrete actions must be integer indices")
    acts = acts.astype(int)
    if acts.min() < 0 or acts.max() >= n:
        raise ValueError(f"action indices must lie in [0, {n})")
    return acts


def _validate_bids(bids: np.ndarray) -> np.ndarray:
    bids = np.asarray(bids, dtype=float)
    if np.any(bids < 0):
        raise ValueError("bids must be nonnegative")
    return bids


def expected_totals(landscape, strategy: Strategy) -> tuple[float, float]:
    """Exact expected (spending, utility) of a strategy on a landscape.

    Discrete case: sums over each opportunity's joint matrix. Exponential
    first-price case: per-opportunity closed forms x(1 - e^{-lam x}) for
    spend and p(1 - e^{-lam1 x}) for expected conversions.
    """
    if _is_discrete(landscape):
        joints, wins, spend = _discrete_arrays(landscape)
        n_opp, n, _ = joints.shape
        acts = _discrete_action_indices(strategy.actions_for(n_opp), n)
        p_m = joints.sum(axis=1)  # P(M=m) per opportunity
        u_vals = np.arange(n, dtype=float)
        # E[U ; M=m] = sum_u u P(u, m), an unconditional joint sum
        u_mass = np.einsum("u,kum->km", u_vals, joints)
        w_sel = np.take_along_axis(wins, acts[:, None, None], axis=2)[:, :, 0]
        s_sel = spend[:, acts].T  # (N, n) spend column per chosen action
        e_spend = float(np.sum(p_m * s_sel * w_sel))
        e_util = float(np.sum(u_mass * w_sel))
        return e_spend, e_util

    lam = np.asarray(landscape.lam, dtype=float)
    lam1 = np.asarray(landscape.lam1, dtype=float)
    p = np.asarray(landscape.p, dtype=float)
    bids = _validate_bids(strategy.actions_for(lam.size))
    e_spend = float(np.sum(bids * -np.expm1(-lam * bids)))
    e_util = float(np.sum(p * -np.expm1(-lam1 * bids)))
    return e_spend, e_util


def lagrangian(landscape, strategy: Strategy, scale: ScaleAndBudget) -> float:
    """Expected utility - mu * expected spending + mu * budget."""
    e_spend, e_util = expected_totals(landscape, strategy)
    return e_util - scale.mu * e_spend + scale.mu * scale.budget


def simulate_auctions(
    landscape, strategy: Strategy, seed: int, use_poisson_n: bool = False
) -> Totals:
    """Draw one realized run of every opportunity in the landscape.

    (U, M) pairs are sampled from each opportunity's joint law and the win
    toss uses the landscape's win model. Randomness is laid out positionally
    (row k belongs to opportunity k), so results are reproducible and
    independent of evaluation order. With ``use_poisson_n`` the number of
    auctions is Poisson(N) with contexts resampled uniformly from the
    landscape, instead of exactly one pass.
    """
    rng = substream(seed)
    if _is_discrete(landscape):
        joints, wins, spend = _discrete_arrays(landscape)
        n_opp, n, _ = joints.shape
        acts_all = _discrete_action_indices(strategy.actions_for(n_opp), n)
        idx = np.arange(n_opp)
        if use_poisson_n:
            idx = rng.integers(0, n_opp, rng.poisson(n_opp))
        u01 = rng.uniform(size=(idx.size, 2))
        flat = joints[idx].reshape(idx.size, n * n)
        cum = np.cumsum(flat, axis=1)
        cell = np.sum(u01[:, :1] * cum[:, -1:] > cum, axis=1)
        u_idx, m_idx = np.divmod(cell, n)
        acts = acts_all[idx]
        won = u01[:, 1] < wins[idx, m_idx, acts]
        spent = float(np.sum(spend[m_idx, acts] * won))
        utility = float(np.sum(u_idx * won))
        return Totals(spent, utility, int(won.sum()))

    lam = np.asarray(landscape.lam, dtype=float)
    lam1 = np.asarray(landscape.lam1, dtype=float)
    p = np.asarray(landscape.p, dtype=float)
    bids_all = _validate_bids(strategy.actions_for(lam.size))
    idx = np.arange(lam.size)
    if use_poisson_n:
        idx = rng.integers(0, lam.size, rng.poisson(lam.size))
    u01 = rng.uniform(size=(idx.size, 2))
    lam_d, lam1_d, p_d, bids = lam[idx], lam1[idx], p[idx], bids_all[idx]
    market = -np.log1p(-u01[:, 0]) / lam_d
    won = market <= bids
    # conversion probability given the realized price; exact wherever it is
    # a proper probability, which always covers the won region in sane
    # landscapes (the clip can bind only far out in the losing tail, where
    # the exponential may overflow to inf before being clipped to 1)
    with np.errstate(over="ignore"):
        q = p_d * (lam1_d / lam_d) * np.exp((lam_d - lam1_d) * market)
    if np.any(q[won] > 1.0):
        logger.warning(
            "simulate_auctions: conversion probability clipped at 1 inside the "
            "won region; realized conversions will undershoot the closed form"
        )
    converted = u01[:, 1] < np.clip(q, 0.0, 1.0)
    spent = float(np.sum(bids[won]))
    utility = float(np.sum(converted & won))
    return Totals(spent, utility, int(won.sum()))


def resolve_auctions(
    opportunities: Sequence[Opportunity],
    rules: AuctionRules,
    strategy: Strategy,
    seed: int = 0,
) -> Totals:
    """Accumulate totals over realized opportunities under explicit rules.

    The strategy is applied to each opportunity's observable context. Win
    tosses consume one uniform per opportunity in listed order; for indicator
    win functions the toss is immaterial.
    """
    rng = substream(seed)
    tosses = rng.uniform(size=len(opportunities))
    spent = utility = 0.0
    wins = 0
    for opp, toss in zip(opportunities, tosses):
        action = strategy.action_fn(opp.observable_context)
        if action < 0:
            raise ValueError("bids must be nonnegative")
        w = rules.win_fn(opp.market_condition, action)
        if not 0.0 <= w <= 1.0:
            raise ValueError("win function must return a probability")
        if toss < w:
            wins += 1
            spent += rules.spend_fn(opp.market_condition, action)
            utility += opp.utility
    return Totals(spent, utility, wins)
