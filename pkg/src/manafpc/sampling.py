"""Mana-proportional quorum sampling and the shared random threshold stream.

Every protocol instance derives its random streams from one integer master
seed. A stream labelled ``name`` is seeded with
``numpy.random.SeedSequence(master_seed, spawn_key=(STREAM_LABELS[name],))``
and drives a PCG64 generator. The label codes are part of the reproducibility
contract and must not be renumbered.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

STREAM_LABELS = {
    "thresholds": 0,
    "sampling": 1,
    "adversary": 2,
    "detection": 3,
    "analysis": 4,
}


def substream(master_seed: int, label: str) -> np.random.Generator:
    """Independent generator for one named purpose under ``master_seed``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(STREAM_LABELS[label],))
    return np.random.Generator(np.random.PCG64(seq))


class AliasTable:
    """Vose alias table over a subset of node indices.

    Construction is O(n); each draw costs one integer and one uniform.
    """

    def __init__(self, weights, nodes=None):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a non-empty 1-d sequence")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be non-negative with positive total")
        self.nodes = np.arange(len(w)) if nodes is None else np.asarray(nodes, dtype=np.int64)
        n = len(w)
        scaled = (w / w.sum() * n).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i, p in enumerate(scaled) if p < 1.0]
        large = [i for i, p in enumerate(scaled) if p >= 1.0]
        while small and large:
            lo = small.pop()
            hi = large.pop()
            prob[lo] = scaled[lo]
            alias[lo] = hi
            scaled[hi] = scaled[hi] + scaled[lo] - 1.0
            if scaled[hi] < 1.0:
                small.append(hi)
            else:
                large.append(hi)
        # leftovers are 1 up to rounding
        self.prob = np.array(prob)
        self.alias = np.array(alias, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.prob)

    def probabilities(self) -> np.ndarray:
        """Per-slot selection probability implied by the table (for audits)."""
        n = len(self.prob)
        p = self.prob / n
        np.add.at(p, self.alias, (1.0 - self.prob) / n)
        return p

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        slot = rng.integers(0, len(self.prob), size=size)
        coin = rng.random(size=size)
        pick = np.where(coin < self.prob[slot], slot, self.alias[slot])
        return self.nodes[pick]


@dataclass
class Quorum:
    """Draws of one querier in draw order; repeated indices are repeated votes."""

    draws: np.ndarray
    short: bool = False
    multiplicities: dict = field(init=False)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=np.int64)
        self.multiplicities = dict(Counter(self.draws.tolist()))

    @property
    def size(self) -> int:
        return len(self.draws)

    @property
    def distinct_count(self) -> int:
        return len(self.multiplicities)


def _as_table(dist) -> AliasTable:
    if isinstance(dist, AliasTable):
        return dist
    weights = getattr(dist, "weights", dist)
    return AliasTable(weights)


def sample_quorum(dist, k: int, rng: np.random.Generator) -> Quorum:
    """``k`` independent draws with replacement, node j with probability m_j."""
    if k < 1:
        raise ValueError(f"quorum size must be >= 1, got {k}")
    return Quorum(_as_table(dist).sample(rng, k))


def fixed_effective_batch(table: AliasTable, rows: int, k_target: int, draw_cap: int,
                          rng: np.random.Generator):
    """Draw for ``rows`` queriers until each has ``k_target`` distinct responders.

    Returns ``(draws, valid, short)``: a ``(rows, L)`` draw matrix (``-1`` in
    unused cells), the mask of draws that belong to each quorum, and a
    per-row flag set when ``draw_cap`` ran out first.
    """
    if draw_cap < k_target:
        raise ValueError("draw_cap must be >= k_target")
    # most rows finish within 2 * k_target draws unless mana is very concentrated
    width = min(2 * k_target, draw_cap)
    draws = table.sample(rng, (rows, width))
    while True:
        order = np.argsort(draws, axis=1, kind="stable")
        ordered = np.take_along_axis(draws, order, axis=1)
        first_sorted = np.ones_like(ordered, dtype=bool)
        first_sorted[:, 1:] = ordered[:, 1:] != ordered[:, :-1]
        first = np.empty_like(first_sorted)
        np.put_along_axis(first, order, first_sorted, axis=1)
        first &= draws >= 0
        distinct = np.cumsum(first, axis=1)
        reached = distinct[:, -1] >= k_target
        if reached.all() or width >= draw_cap:
            break
        extra = min(width, draw_cap - width)
        block = np.full((rows, extra), -1, dtype=np.int64)
        pending = ~reached
        block[pending] = table.sample(rng, (int(pending.sum()), extra))
        draws = np.concatenate([draws, block], axis=1)
        width += extra
    stop = np.where(reached, np.argmax(distinct >= k_target, axis=1), width - 1)
    valid = (np.arange(width)[None, :] <= stop[:, None]) & (draws >= 0)
    return draws, valid, ~reached


def sample_quorum_fixed_effective(dist, k_target: int, rng: np.random.Generator,
                                  draw_cap: int | None = None) -> Quorum:
    """Sample with replacement until ``k_target`` distinct nodes are present.

    Repeated picks keep their multiplicity. When ``draw_cap`` (default
    ``20 * k_target``) is exhausted first, the returned quorum has ``short=True``.
    """
    table = _as_table(dist)
    if k_target < 1:
        raise ValueError(f"k_target must be >= 1, got {k_target}")
    if k_target > len(table):
        raise ValueError(f"k_target={k_target} exceeds the {len(table)} available nodes")
    cap = 20 * k_target if draw_cap is None else draw_cap
    draws, valid, short = fixed_effective_batch(table, 1, k_target, cap, rng)
    return Quorum(draws[0][valid[0]], short=bool(short[0]))


@dataclass(frozen=True, eq=False)
class ThresholdSequence:
    """Per-round thresholds U_1, U_2, ... shared by every node of an instance."""

    beta: float
    values: np.ndarray

    def __getitem__(self, t: int) -> float:
        """U_t for t >= 1."""
        return float(self.values[t - 1])

    def __len__(self) -> int:
        return len(self.values)


def threshold_sequence(seed: int, rounds: int, beta: float) -> ThresholdSequence:
    if not 0 <= beta <= 0.5:
        raise ValueError(f"beta must lie in [0, 0.5], got {beta}")
    u = substream(seed, "thresholds").random(rounds)
    return ThresholdSequence(beta=float(beta), values=beta + (1.0 - 2.0 * beta) * u)
