"""Adversary strategies: cautious manaIVS, berserk opinion splitting, semi-cautious silence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("mana_ivs", "berserk_split", "semi_cautious_drop", "none")

# accepted spellings on the command line and in config files
ALIASES = {
    "manaivs": "mana_ivs",
    "mana_ivs": "mana_ivs",
    "ivs": "mana_ivs",
    "berserk": "berserk_split",
    "berserk_split": "berserk_split",
    "semi_cautious": "semi_cautious_drop",
    "semi_cautious_drop": "semi_cautious_drop",
    "none": "none",
}


@dataclass(frozen=True)
class AdversaryStrategy:
    """Which strategy every adversary node follows.

    ``none`` means adversary nodes stay silent: they are sampled but never reply.
    """

    kind: str = "mana_ivs"
    drop_p: float = 0.5

    def __post_init__(self):
        kind = ALIASES.get(str(self.kind).lower().replace("-", "_"))
        if kind is None:
            raise ValueError(f"unknown adversary strategy {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not 0 <= self.drop_p <= 1:
            raise ValueError(f"drop_p must lie in [0, 1], got {self.drop_p}")

    @property
    def cautious(self) -> bool:
        return self.kind in ("mana_ivs", "semi_cautious_drop", "none")


def mana_ivs_opinion(opinions, manas) -> int:
    """Opinion held by the smaller honest mana mass; ties go to 0."""
    s = np.asarray(opinions)
    m = np.asarray(manas, dtype=float)
    if len(s) == 0:
        raise ValueError("manaIVS needs at least one honest node")
    mass_one = float(m[s == 1].sum())
    mass_zero = float(m[s == 0].sum())
    return 1 if mass_one < mass_zero else 0


@dataclass
class SplitTally:
    """Per-round bookkeeping of a berserk node's two answer groups."""

    g0: list = field(default_factory=list)
    g1: list = field(default_factory=list)

    @property
    def received(self) -> int:
        return len(self.g0) + len(self.g1)

    @property
    def f(self) -> int:
        """Number of queries answered with 0, ceil(received / 2)."""
        return len(self.g0)

    def reset(self) -> None:
        self.g0.clear()
        self.g1.clear()


def berserk_split_answer(querier: int, tally: SplitTally) -> int:
    """Alternate 0, 1, 0, 1, ... across the queries of one round."""
    if tally.received % 2 == 0:
        tally.g0.append(querier)
        return 0
    tally.g1.append(querier)
    return 1


def semi_cautious_answer(ivs_opinion: int, rng: np.random.Generator, drop_p: float):
    """manaIVS answer, or ``None`` (no reply) with probability ``drop_p``."""
    if not 0 <= drop_p <= 1:
        raise ValueError(f"drop_p must lie in [0, 1], got {drop_p}")
    if rng.random() < drop_p:
        return None
    return ivs_opinion


def _rank_within_groups(keys: np.ndarray) -> np.ndarray:
    """0-based position of each element among earlier elements with the same key."""
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    ordered = keys[order]
    starts = np.ones(len(keys), dtype=bool)
    starts[1:] = ordered[1:] != ordered[:-1]
    start_pos = np.maximum.accumulate(np.where(starts, np.arange(len(keys)), 0))
    rank = np.empty(len(keys), dtype=np.int64)
    rank[order] = np.arange(len(keys)) - start_pos
    return rank


def respond_batch(strategy: AdversaryStrategy, responders: np.ndarray, ivs: int,
                  rng: np.random.Generator):
    """Answers of adversary nodes to one round of queries, in query order.

    ``responders`` lists the queried adversary node for each query. Returns
    ``(answers, received)`` arrays of the same length.
    """
    n = len(responders)
    if strategy.kind == "mana_ivs":
        return np.full(n, ivs, dtype=np.int8), np.ones(n, dtype=bool)
    if strategy.kind == "berserk_split":
        answers = (_rank_within_groups(responders) % 2).astype(np.int8)
        return answers, np.ones(n, dtype=bool)
    if strategy.kind == "semi_cautious_drop":
        received = rng.random(n) >= strategy.drop_p
        return np.full(n, ivs, dtype=np.int8), received
    return np.zeros(n, dtype=np.int8), np.zeros(n, dtype=bool)
