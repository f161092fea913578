"""Mana distributions: Zipf-law honest weights plus equal-weight adversary nodes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np


def zipf_weights(n: int, s: float) -> np.ndarray:
    """Return the normalized Zipf profile ``i**-s / sum(j**-s)`` for ranks 1..n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if s < 0:
        raise ValueError(f"Zipf exponent must be >= 0, got {s}")
    ranks = np.arange(1, n + 1, dtype=float)
    raw = ranks ** (-float(s))
    return raw / raw.sum()


@dataclass(frozen=True, eq=False)
class ManaDistribution:
    n_total: int
    zipf_s: float
    adversary_q: float
    weights: np.ndarray = field(repr=False)
    n_adversary: int

    @property
    def n_honest(self) -> int:
        return self.n_total - self.n_adversary

    @property
    def honest_weights(self) -> np.ndarray:
        return self.weights[: self.n_honest]

    @property
    def adversary_share(self) -> float:
        """Realized adversary mana, n_adversary / n_total."""
        return self.n_adversary / self.n_total

    def is_adversary(self, index: int) -> bool:
        return index >= self.n_honest

    def to_csv(self, out: TextIO | None = None) -> str:
        """Write ``index,mana,is_adversary`` rows (1-based index); returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "mana", "is_adversary"])
        for i, m in enumerate(self.weights):
            writer.writerow([i + 1, repr(float(m)), int(i >= self.n_honest)])
        text = buf.getvalue()
        if out is not None:
            out.write(text)
        return text


def build_network(n: int, s: float, q: float, zipf_over: str = "honest") -> ManaDistribution:
    """Build a network of ``n`` nodes where an adversary holds share ``q``.

    The adversary runs ``round(q * n)`` nodes of mana ``1/n`` each, placed at
    the highest indices. Honest nodes carry Zipf(s) weights rescaled to the
    remaining ``1 - n_adv / n``.

    ``zipf_over`` selects the rank range of the honest Zipf law: ``"honest"``
    uses ranks ``1..n - n_adv``; ``"all"`` evaluates the law over ``1..n`` and
    keeps the top ``n - n_adv`` ranks (sensitivity switch).
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0 <= q < 1:
        raise ValueError(f"adversary share q must lie in [0, 1), got {q}")
    if s < 0:
        raise ValueError(f"Zipf exponent must be >= 0, got {s}")
    n_adv = int(round(q * n))
    n_honest = n - n_adv
    if n_honest < 1:
        raise ValueError(f"q={q} with n={n} leaves no honest nodes")

    if zipf_over == "honest":
        profile = zipf_weights(n_honest, s)
    elif zipf_over == "all":
        profile = zipf_weights(n, s)[:n_honest]
        profile = profile / profile.sum()
    else:
        raise ValueError(f"zipf_over must be 'honest' or 'all', got {zipf_over!r}")

    honest_total = (n - n_adv) / n
    weights = np.empty(n)
    weights[:n_honest] = profile * honest_total
    weights[n_honest:] = 1.0 / n
    return ManaDistribution(
        n_total=n, zipf_s=float(s), adversary_q=float(q), weights=weights, n_adversary=n_adv
    )


def effective_node_count(dist: ManaDistribution, gamma: float = 1.0) -> int:
    """Number of nodes holding at least ``gamma / N`` of the mana."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    # relative slack absorbs rounding in weights that equal the cutoff exactly
    cutoff = gamma / dist.n_total
    return int(np.count_nonzero(dist.weights >= cutoff * (1 - 1e-12)))
