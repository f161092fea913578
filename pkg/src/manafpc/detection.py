"""Berserk detection through vote-list exchange, plus closed-form detection bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VList:
    """Opinions a reporter received in ``round``, as ``(responder, opinion)`` pairs."""

    reporter: int
    round: int
    entries: tuple


@dataclass(frozen=True)
class BerserkEvidence:
    accused: int
    round: int
    # ((opinion, witness reporter), (opinion, witness reporter))
    conflicting: tuple
    signatures_valid: tuple = (True, True)

    def well_formed(self) -> bool:
        (op_a, _), (op_b, _) = self.conflicting
        return op_a != op_b and all(self.signatures_valid)


def maybe_attach_vlist_request(rng: np.random.Generator, p_b: float) -> bool:
    if not 0 <= p_b <= 1:
        raise ValueError(f"p_B must lie in [0, 1], got {p_b}")
    return bool(rng.random() < p_b)


def cross_check(collected) -> list:
    """Evidence for every (node, round) reported with two different opinions.

    Opinions of the same node in different rounds never conflict.
    """
    seen: dict = {}
    for vlist in collected:
        for node, opinion in vlist.entries:
            seen.setdefault((node, vlist.round), {}).setdefault(int(opinion), vlist.reporter)
    evidence = []
    for (node, rnd), by_opinion in sorted(seen.items()):
        if len(by_opinion) > 1:
            evidence.append(BerserkEvidence(
                accused=node, round=rnd,
                conflicting=((0, by_opinion[0]), (1, by_opinion[1])),
            ))
    return evidence


@dataclass
class ExclusionState:
    """Nodes dropped network-wide, keyed by the first round they are no longer sampled."""

    excluded_from: dict = field(default_factory=dict)

    def excluded_at(self, round_index: int) -> set:
        return {node for node, start in self.excluded_from.items() if start <= round_index}


def apply_evidence(state: ExclusionState, evidence: BerserkEvidence,
                   found_in_round: int) -> ExclusionState:
    """Exclude the accused from sampling from the round after ``found_in_round``.

    Repeated evidence against an already excluded node changes nothing.
    """
    if not evidence.well_formed():
        raise ValueError(f"malformed evidence against node {evidence.accused}")
    if evidence.accused not in state.excluded_from:
        state.excluded_from[evidence.accused] = found_in_round + 1
    return state


def conflicts_batch(detector: np.ndarray, accused: np.ndarray, opinion: np.ndarray,
                    n_nodes: int):
    """Vectorized cross-check of one round's collected v-list entries.

    Each entry says: ``detector`` holds a v-list claiming ``accused`` voted
    ``opinion`` in the previous round. Returns the sorted unique
    ``(detector, accused)`` pairs that saw both opinions.
    """
    if len(detector) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    key = detector.astype(np.int64) * n_nodes + accused
    keys, inverse = np.unique(key, return_inverse=True)
    lo = np.full(len(keys), 2, dtype=np.int8)
    hi = np.full(len(keys), -1, dtype=np.int8)
    np.minimum.at(lo, inverse, opinion)
    np.maximum.at(hi, inverse, opinion)
    hits = keys[lo != hi]
    return hits // n_nodes, hits % n_nodes


def gamma_uniform(n: int, k: int, p_b: float, f: int) -> float:
    """Per-node probability of receiving v-lists from both answer groups (s = 0)."""
    if k > n:
        raise ValueError(f"quorum size k={k} exceeds network size N={n}")
    if not 0 <= f <= k:
        raise ValueError(f"split count f={f} must lie in [0, k]")
    if not 0 <= p_b <= 1:
        raise ValueError(f"p_B must lie in [0, 1], got {p_b}")
    gamma = 2 * math.comb(k, 2) * p_b**2 * (f / n) * ((k - f) / (n - 1))
    # (N-k)/(N-2) * ... * (N-2k+3)/(N-k+1): k-2 factors
    for i in range(k - 2):
        gamma *= (n - k - i) / (n - 2 - i)
    return gamma


def detection_bound_uniform(n: int, k: int, p_b: float, f: int) -> float:
    """Lower bound on the chance that some node detects a berserk node (s = 0)."""
    gamma = gamma_uniform(n, k, p_b, f)
    return 1.0 - (1.0 - gamma) ** (n - 1)


def gamma_mana(p_b: float, m_b: float) -> float:
    if not 0 < m_b < 1:
        raise ValueError(f"m_B must lie in (0, 1), got {m_b}")
    if not 0 <= p_b <= 1:
        raise ValueError(f"p_B must lie in [0, 1], got {p_b}")
    m_q = m_b * (1 - m_b)
    return 2 * (p_b * m_q / 2) ** 2


def detection_bound_mana(n: int, p_b: float, m_b: float) -> float:
    """Lower bound when the berserk node holds mana ``m_b``; holds for any k >= 2."""
    return 1.0 - (1.0 - gamma_mana(p_b, m_b)) ** (n - 1)
