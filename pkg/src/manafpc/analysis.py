"""Voting power, fairness under mana splits, quorum exit probabilities and query load."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammaln, logsumexp

from .mana import ManaDistribution
from .protocol import initial_opinions
from .sampling import AliasTable

ENUMERATION_BUDGET = 10**6


def _one(m):
    return np.ones_like(np.asarray(m, dtype=float))


def _identity(m):
    return np.asarray(m, dtype=float)


def _square(m):
    return np.asarray(m, dtype=float) ** 2


SAMPLING_FUNCTIONS = {"identity": _identity, "square": _square}
OPINION_WEIGHTS = {"one": _one, "identity": _identity}


@dataclass(frozen=True)
class VotingScheme:
    """Sampling weight ``f`` and opinion weight ``g``, given by name or callable."""

    f: str | Callable = "identity"
    g: str | Callable = "one"

    def _resolve(self, fn, table):
        if callable(fn):
            return fn
        try:
            return table[fn]
        except KeyError:
            raise ValueError(f"unknown weight function {fn!r}; choose from {sorted(table)}") from None

    def sampling_probabilities(self, manas) -> np.ndarray:
        fm = np.asarray(self._resolve(self.f, SAMPLING_FUNCTIONS)(manas), dtype=float)
        if np.any(fm <= 0):
            raise ValueError("sampling weights must be positive")
        return fm / fm.sum()

    def opinion_weights(self, manas) -> np.ndarray:
        gm = np.asarray(self._resolve(self.g, OPINION_WEIGHTS)(manas), dtype=float)
        if np.any(gm <= 0):
            raise ValueError("opinion weights must be positive")
        return gm


@dataclass
class VotingPowerReport:
    powers: np.ndarray
    method: str
    samples: int | None = None
    stderr: np.ndarray | None = None


class EnumerationBudgetExceeded(ValueError):
    """Too many quorum compositions for exact enumeration; use ``voting_power_mc``."""


def compositions(k: int, n: int) -> np.ndarray:
    """All ``y`` in N^n with ``sum(y) == k``, in lexicographic order, as a (C, n) array."""
    if n == 1:
        return np.array([[k]], dtype=np.int64)
    rows = []
    for first in range(k + 1):
        rest = compositions(k - first, n - 1)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(rows)


def voting_power_exact(manas, scheme: VotingScheme | None = None, k: int = 1,
                       budget: int = ENUMERATION_BUDGET) -> VotingPowerReport:
    """Expected opinion share of each node in a random size-``k`` quorum, by enumeration."""
    scheme = scheme or VotingScheme()
    manas = np.asarray(manas, dtype=float)
    n = len(manas)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    count = math.comb(n + k - 1, k)
    if count > budget:
        raise EnumerationBudgetExceeded(
            f"{count} compositions exceed the budget of {budget}; use voting_power_mc")
    p = scheme.sampling_probabilities(manas)
    g = scheme.opinion_weights(manas)
    ys = compositions(k, n)
    log_coef = gammaln(k + 1) - gammaln(ys + 1).sum(axis=1)
    log_prob = (ys * np.log(p)).sum(axis=1)
    weight = np.exp(log_coef + log_prob)
    share = ys * g / (ys @ g)[:, None]
    return VotingPowerReport(powers=weight @ share, method="exact")


def voting_power_mc(manas, scheme: VotingScheme | None = None, k: int = 1,
                    samples: int = 10_000, rng: np.random.Generator | None = None) -> VotingPowerReport:
    scheme = scheme or VotingScheme()
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    rng = rng if rng is not None else np.random.default_rng()
    manas = np.asarray(manas, dtype=float)
    p = scheme.sampling_probabilities(manas)
    g = scheme.opinion_weights(manas)
    ys = rng.multinomial(k, p, size=samples)
    share = ys * g / (ys @ g)[:, None]
    return VotingPowerReport(
        powers=share.mean(axis=0),
        method="monte_carlo",
        samples=samples,
        stderr=share.std(axis=0, ddof=1) / math.sqrt(samples),
    )


def fairness_deviation(manas, scheme: VotingScheme | None, k: int, split_node: int,
                       x: float, budget: int = ENUMERATION_BUDGET) -> float:
    """Change in a node's total voting power when it splits its mana ``x : 1 - x``."""
    manas = np.asarray(manas, dtype=float)
    if not 0 < x < 1:
        raise ValueError(f"split ratio must lie in (0, 1), got {x}")
    if manas[split_node] <= 0:
        raise ValueError("split node must hold positive mana")
    before = voting_power_exact(manas, scheme, k, budget).powers[split_node]
    split = manas.copy()
    split[split_node] = x * manas[split_node]
    split = np.append(split, (1 - x) * manas[split_node])
    after = voting_power_exact(split, scheme, k, budget).powers
    return float(abs(before - (after[split_node] + after[-1])))


def _floor_count(tau: float, k: int) -> int:
    # guard against tau * k landing just under an integer
    return math.floor(tau * k + 1e-9)


def exit_probability(k: int, p: float, tau: float) -> float:
    """P(Y <= floor(tau * k)) for Y ~ Binomial(k, p), summed in log space."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    top = _floor_count(tau, k)
    if top >= k:
        return 1.0
    if p == 0:
        return 1.0
    if p == 1:
        return 0.0
    m = np.arange(top + 1)
    log_pmf = (gammaln(k + 1) - gammaln(m + 1) - gammaln(k - m + 1)
               + m * math.log(p) + (k - m) * math.log1p(-p))
    return float(min(1.0, math.exp(logsumexp(log_pmf))))


def rate_function(tau: float, p: float) -> float:
    """Relative entropy of Bernoulli(tau) with respect to Bernoulli(p)."""
    if not 0 < tau < 1 or not 0 < p < 1:
        raise ValueError(f"tau and p must lie in (0, 1), got tau={tau}, p={p}")
    return tau * math.log(tau / p) + (1 - tau) * math.log((1 - tau) / (1 - p))


def chernoff_bound(k: int, p: float, tau: float) -> float:
    """exp(-k I(tau)), an upper bound on ``exit_probability`` for tau < p."""
    return math.exp(-k * rate_function(tau, p))


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float
    samples: int


def top_node_flip_probability(dist: ManaDistribution, p: float, tau: float, k: int,
                              samples: int = 100_000,
                              rng: np.random.Generator | None = None) -> MonteCarloEstimate:
    """Chance that the highest-mana node sees eta <= tau in one vanilla round.

    The top honest nodes holding more than mana ``p`` start with opinion 1, the
    remaining honest nodes with 0; adversary nodes answer 0.
    """
    rng = rng if rng is not None else np.random.default_rng()
    opinions = np.zeros(dist.n_total, dtype=np.int64)
    opinions[: dist.n_honest] = initial_opinions(dist, p)
    draws = AliasTable(dist.weights).sample(rng, (samples, k))
    ones = opinions[draws].sum(axis=1)
    hits = ones <= _floor_count(tau, k)
    value = float(hits.mean())
    return MonteCarloEstimate(value, math.sqrt(value * (1 - value) / samples), samples)


@dataclass
class LoadSummary:
    per_node: np.ndarray        # mean draws answered per round
    expected: np.ndarray        # k * (querying nodes) * m_i, averaged over rounds
    buckets: list               # (first_rank, last_rank, mean per-node load)
    rounds: int


def query_load_stats(trace, weights, k: int, n_buckets: int = 10) -> LoadSummary:
    """Mean per-round query load by mana rank from a traced run."""
    if not trace:
        raise ValueError("query_load_stats needs a run executed with trace=True")
    weights = np.asarray(weights, dtype=float)
    loads = np.array([rec.load for rec in trace], dtype=float)
    querying = np.array([int((~rec.finalized).sum()) for rec in trace], dtype=float)
    per_node = loads.mean(axis=0)
    expected = k * querying.mean() * weights
    n = len(weights)
    edges = np.linspace(0, n, min(n_buckets, n) + 1).round().astype(int)
    buckets = [(int(a) + 1, int(b), float(per_node[a:b].mean()))
               for a, b in zip(edges[:-1], edges[1:]) if b > a]
    return LoadSummary(per_node=per_node, expected=expected, buckets=buckets, rounds=len(trace))
