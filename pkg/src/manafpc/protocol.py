"""FPC with mana-weighted sampling: node update rules and full protocol instances.

One instance runs synchronous rounds. In round ``r`` every honest node that
has not finalized samples a quorum, collects the opinions its responders held
at the end of round ``r - 1``, and updates. Round 1 compares against the fixed
threshold ``tau``; round ``r >= 2`` against the shared random ``U_{r-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adversary import AdversaryStrategy, mana_ivs_opinion, respond_batch
from .detection import BerserkEvidence, ExclusionState, apply_evidence, conflicts_batch
from .mana import ManaDistribution
from .sampling import AliasTable, ThresholdSequence, fixed_effective_batch, substream, threshold_sequence

IMPROVEMENTS = ("fixed_tail_threshold", "self_opinion_bias", "fixed_effective_quorum")
AGREEMENT_MODES = ("mana", "node_count")

# tolerance for cumulative-mana comparisons
_EPS = 1e-12


def parse_improvements(value) -> frozenset:
    """Accept ``"all"``, ``"none"``/``"vanilla"``, a comma list, or an iterable of flag names."""
    if value is None:
        return frozenset()
    if isinstance(value, str):
        token = value.strip().lower()
        if token == "all":
            return frozenset(IMPROVEMENTS)
        if token in ("", "none", "vanilla"):
            return frozenset()
        value = [v.strip() for v in token.split(",") if v.strip()]
    flags = frozenset(value)
    unknown = flags - set(IMPROVEMENTS)
    if unknown:
        raise ValueError(f"unknown improvement flag(s) {sorted(unknown)}; choose from {IMPROVEMENTS}")
    return flags


@dataclass(frozen=True)
class ProtocolConfig:
    k: int = 20
    p0: float = 0.66
    tau: float = 0.66
    beta: float = 0.3
    l: int = 10
    l2: int = 5
    max_it: int = 50
    alpha: float = 0.01
    tau_final: float = 0.5
    improvements: frozenset = frozenset()
    agreement_mode: str = "mana"
    draw_cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "improvements", parse_improvements(self.improvements))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 < self.p0 <= 1:
            raise ValueError(f"p0 must lie in (0, 1], got {self.p0}")
        if not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0 <= self.beta <= 0.5:
            raise ValueError(f"beta must lie in [0, 0.5], got {self.beta}")
        if not 1 <= self.l2 <= self.l <= self.max_it:
            raise ValueError(f"need 1 <= l2 <= l <= max_it, got l2={self.l2}, l={self.l}, "
                             f"max_it={self.max_it}")
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0 < self.tau_final < 1:
            raise ValueError(f"tau_final must lie in (0, 1), got {self.tau_final}")
        if self.agreement_mode not in AGREEMENT_MODES:
            raise ValueError(f"agreement_mode must be one of {AGREEMENT_MODES}")
        if self.draw_cap is not None and self.draw_cap < self.k:
            raise ValueError("draw_cap must be >= k")

    def has(self, flag: str) -> bool:
        return flag in self.improvements

    @property
    def improvements_mask(self) -> int:
        return sum(1 << i for i, name in enumerate(IMPROVEMENTS) if name in self.improvements)

    @property
    def effective_draw_cap(self) -> int:
        return self.draw_cap if self.draw_cap is not None else 20 * self.k


@dataclass(frozen=True)
class DetectionConfig:
    enabled: bool = False
    p_b: float = 0.0

    def __post_init__(self):
        if not 0 <= self.p_b <= 1:
            raise ValueError(f"p_B must lie in [0, 1], got {self.p_b}")


@dataclass(frozen=True)
class NodeState:
    opinion: int
    cnt: int = 0
    finalized: bool = False
    final_opinion: int | None = None
    mana: float = 0.0


def initial_opinions(dist: ManaDistribution, p0: float) -> np.ndarray:
    """Opinion 1 for the top honest nodes whose cumulative mana first exceeds ``p0``.

    If the honest mana never exceeds ``p0`` (e.g. ``p0 = 1``) every honest
    node starts with opinion 1.
    """
    if not 0 < p0 <= 1:
        raise ValueError(f"p0 must lie in (0, 1], got {p0}")
    cum = np.cumsum(dist.honest_weights)
    over = np.flatnonzero(cum > p0 + _EPS)
    j = int(over[0]) + 1 if len(over) else dist.n_honest
    opinions = np.zeros(dist.n_honest, dtype=np.int8)
    opinions[:j] = 1
    return opinions


def aggregate_eta(responses, self_opinion: int, self_mana: float, bias_enabled: bool):
    """Mean received opinion, optionally biased toward the node's own opinion.

    ``responses`` holds one ``(opinion, received)`` or ``(opinion, received,
    is_self)`` tuple per draw. Returns ``None`` when there is nothing to
    average over.
    """
    total = 0.0
    count = 0
    for resp in responses:
        opinion, received = resp[0], resp[1]
        is_self = resp[2] if len(resp) > 2 else False
        if not received or (bias_enabled and is_self):
            continue
        total += opinion
        count += 1
    if count == 0:
        return None
    eta_star = total / count
    if bias_enabled:
        return self_mana * self_opinion + (1.0 - self_mana) * eta_star
    return eta_star


def _threshold_for(round_index: int, cnt, thresholds: ThresholdSequence, config: ProtocolConfig):
    """Comparison threshold and whether round-1 ``>=`` semantics apply."""
    if round_index == 1:
        return config.tau, True
    u = thresholds[round_index - 1]
    if config.has("fixed_tail_threshold"):
        return np.where(np.asarray(cnt) >= config.l - config.l2, config.tau_final, u), False
    return u, False


def update_opinion(state: NodeState, eta, round_index: int, thresholds: ThresholdSequence,
                   config: ProtocolConfig) -> NodeState:
    if state.finalized:
        raise ValueError("finalized nodes do not update")
    threshold, first = _threshold_for(round_index, state.cnt, thresholds, config)
    threshold = float(threshold)
    if eta is None:
        new = state.opinion
    elif first:
        new = 1 if eta >= threshold else 0
    elif eta > threshold:
        new = 1
    elif eta < threshold:
        new = 0
    else:
        new = state.opinion
    cnt = state.cnt + 1 if new == state.opinion else 0
    finalized = cnt >= config.l
    return replace(state, opinion=new, cnt=cnt, finalized=finalized,
                   final_opinion=new if finalized else None)


def update_batch(opinion: np.ndarray, cnt: np.ndarray, eta: np.ndarray, defined: np.ndarray,
                 round_index: int, thresholds: ThresholdSequence, config: ProtocolConfig):
    """Vectorized ``update_opinion``; returns ``(opinion, cnt, finalized)``."""
    threshold, first = _threshold_for(round_index, cnt, thresholds, config)
    if first:
        new = (eta >= threshold).astype(np.int8)
    else:
        new = np.where(eta > threshold, 1, np.where(eta < threshold, 0, opinion)).astype(np.int8)
    new = np.where(defined, new, opinion).astype(np.int8)
    cnt = np.where(new == opinion, cnt + 1, 0)
    return new, cnt, cnt >= config.l


def eta_from_pairs(pos: np.ndarray, mult: np.ndarray, answers: np.ndarray, received: np.ndarray,
                   is_self: np.ndarray, own_opinion: np.ndarray, own_mana: np.ndarray,
                   bias_enabled: bool):
    """Per-querier eta from grouped (querier, responder) pairs.

    ``pos`` is the querier's row in ``own_opinion``; ``mult`` the number of
    draws the pair stands for. Returns ``(eta, defined)``.
    """
    rows = len(own_opinion)
    w = mult * received
    if bias_enabled:
        w = w * ~is_self
    den = np.bincount(pos, weights=w, minlength=rows)
    num = np.bincount(pos, weights=w * answers, minlength=rows)
    defined = den > 0
    eta = np.divide(num, den, out=np.zeros(rows), where=defined)
    if bias_enabled:
        eta = own_mana * own_opinion + (1.0 - own_mana) * eta
    return eta, defined


@dataclass(frozen=True)
class DetectionEvent:
    round: int
    accused: int
    detector: int


@dataclass
class RoundRecord:
    round: int
    threshold: float              # tau in round 1, else the shared U_{r-1}
    opinions: np.ndarray          # honest opinions answered during this round
    finalized: np.ndarray         # honest finalized flags entering this round
    load: np.ndarray              # draws answered per node this round
    adversary_answers: np.ndarray
    undefined_eta: int

    def opinions_rle(self) -> str:
        """Run-length code of the honest opinion bits, e.g. ``1x67,0x8``."""
        bits = self.opinions
        if len(bits) == 0:
            return ""
        cuts = np.flatnonzero(np.diff(bits)) + 1
        starts = np.concatenate([[0], cuts])
        ends = np.concatenate([cuts, [len(bits)]])
        return ",".join(f"{bits[a]}x{b - a}" for a, b in zip(starts, ends))


@dataclass
class RunOutcome:
    final_opinions: np.ndarray
    rounds_used: int
    all_finalized: bool
    minority_mana: float
    minority_nodes: float
    failure_mana_mode: bool
    failure_node_mode: bool
    agreement_failure: bool
    adversary_share: float
    query_load: np.ndarray
    detection_events: list = field(default_factory=list)
    excluded: tuple = ()
    undefined_eta: int = 0
    trace: list | None = None

    @property
    def detected(self) -> bool:
        return bool(self.detection_events)


def _classify(final: np.ndarray, manas: np.ndarray):
    honest_mass = manas.sum()
    mass_one = manas[final == 1].sum()
    minority_mana = min(mass_one, honest_mass - mass_one) / honest_mass
    ones = int(final.sum())
    minority_nodes = min(ones, len(final) - ones) / len(final)
    return float(minority_mana), float(minority_nodes)


def run_instance(dist: ManaDistribution, config: ProtocolConfig,
                 strategy: AdversaryStrategy | None = None,
                 detection: DetectionConfig | None = None,
                 master_seed: int = 0, trace: bool = False) -> RunOutcome:
    """Run one protocol instance to completion; deterministic in ``master_seed``."""
    strategy = strategy or AdversaryStrategy()
    detection = detection or DetectionConfig()
    n, nh = dist.n_total, dist.n_honest
    m = dist.weights
    bias = config.has("self_opinion_bias")
    fixed_eff = config.has("fixed_effective_quorum")

    thresholds = threshold_sequence(master_seed, config.max_it, config.beta)
    rng_sample = substream(master_seed, "sampling")
    rng_adv = substream(master_seed, "adversary")
    rng_det = substream(master_seed, "detection")

    opinion = np.zeros(n, dtype=np.int8)
    opinion[:nh] = initial_opinions(dist, config.p0)
    cnt = np.zeros(nh, dtype=np.int64)
    finalized = np.zeros(nh, dtype=bool)
    query_load = np.zeros(n, dtype=np.int64)
    pos_of = np.full(n, -1, dtype=np.int64)

    exclusions = ExclusionState()
    excluded_now: set = set()
    table = AliasTable(m)
    events: list = []
    records: list | None = [] if trace else None
    undefined_total = 0
    # previous round's received votes, for answering v-list requests
    prev_reporter = prev_responder = prev_opinion = np.zeros(0, dtype=np.int64)

    rounds_used = 0
    for r in range(1, config.max_it + 1):
        excluded_r = exclusions.excluded_at(r)
        if excluded_r != excluded_now:
            excluded_now = excluded_r
            keep = np.setdiff1d(np.arange(n), np.fromiter(excluded_now, dtype=np.int64))
            table = AliasTable(m[keep], nodes=keep)

        active = np.flatnonzero(~finalized)
        rows = len(active)
        rounds_used = r
        pos_of[active] = np.arange(rows)

        if fixed_eff:
            draws, valid, _short = fixed_effective_batch(
                table, rows, config.k, config.effective_draw_cap, rng_sample)
            row_idx, col_idx = np.nonzero(valid)
            queriers = active[row_idx]
            responders = draws[row_idx, col_idx]
        else:
            responders = table.sample(rng_sample, (rows, config.k)).ravel()
            queriers = np.repeat(active, config.k)
        round_load = np.bincount(responders, minlength=n)
        query_load += round_load

        pair_keys, mult = np.unique(queriers * n + responders, return_counts=True)
        pq = pair_keys // n
        pr = pair_keys % n
        answers = opinion[pr].copy()
        received = np.ones(len(pr), dtype=bool)
        adv = pr >= nh
        adv_answers = np.zeros(0, dtype=np.int8)
        if adv.any():
            ivs = mana_ivs_opinion(opinion[:nh], m[:nh])
            adv_answers, adv_received = respond_batch(strategy, pr[adv], ivs, rng_adv)
            answers[adv] = adv_answers
            received[adv] = adv_received

        eta, defined = eta_from_pairs(
            pos_of[pq], mult, answers, received, pq == pr,
            opinion[active], m[active], bias)
        undefined_r = int(rows - defined.sum())
        undefined_total += undefined_r

        if detection.enabled:
            found = _vlist_round(pq, pr, nh, n, detection.p_b, rng_det,
                                 prev_reporter, prev_responder, prev_opinion)
            for det, acc in zip(*found):
                events.append(DetectionEvent(round=r, accused=int(acc), detector=int(det)))
                ev = BerserkEvidence(accused=int(acc), round=r - 1,
                                     conflicting=((0, int(det)), (1, int(det))))
                apply_evidence(exclusions, ev, found_in_round=r)
            got = received.copy()
            prev_reporter, prev_responder, prev_opinion = pq[got], pr[got], answers[got]

        if records is not None:
            records.append(RoundRecord(
                round=r,
                threshold=config.tau if r == 1 else thresholds[r - 1],
                opinions=opinion[:nh].copy(),
                finalized=finalized.copy(),
                load=round_load,
                adversary_answers=np.asarray(adv_answers).copy(),
                undefined_eta=undefined_r,
            ))

        new_op, new_cnt, new_fin = update_batch(
            opinion[active], cnt[active], eta, defined, r, thresholds, config)
        opinion[active] = new_op
        cnt[active] = new_cnt
        finalized[active] = new_fin
        pos_of[active] = -1
        if finalized.all():
            break

    final = opinion[:nh].copy()
    minority_mana, minority_nodes = _classify(final, m[:nh])
    fail_mana = minority_mana >= config.alpha
    fail_node = minority_nodes >= config.alpha
    return RunOutcome(
        final_opinions=final,
        rounds_used=rounds_used,
        all_finalized=bool(finalized.all()),
        minority_mana=minority_mana,
        minority_nodes=minority_nodes,
        failure_mana_mode=bool(fail_mana),
        failure_node_mode=bool(fail_node),
        agreement_failure=bool(fail_mana if config.agreement_mode == "mana" else fail_node),
        adversary_share=dist.adversary_share,
        query_load=query_load,
        detection_events=events,
        excluded=tuple(sorted(exclusions.excluded_from)),
        undefined_eta=undefined_total,
        trace=records,
    )


def _vlist_round(pq, pr, nh, n, p_b, rng, prev_reporter, prev_responder, prev_opinion):
    """V-list requests attached to this round's queries, cross-checked per requester.

    A request to an honest responder returns the votes it received in the
    previous round; adversary responders return nothing.
    """
    request = rng.random(len(pq)) < p_b
    request &= pr < nh
    if not request.any() or len(prev_reporter) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    req_x, req_y = pq[request], pr[request]
    # prev_* are sorted by reporter (they come from sorted pair keys)
    starts = np.searchsorted(prev_reporter, req_y, side="left")
    stops = np.searchsorted(prev_reporter, req_y, side="right")
    sizes = stops - starts
    if sizes.sum() == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    detector = np.repeat(req_x, sizes)
    offsets = np.repeat(starts - np.cumsum(sizes) + sizes, sizes) + np.arange(sizes.sum())
    return conflicts_batch(detector, prev_responder[offsets], prev_opinion[offsets], n)
