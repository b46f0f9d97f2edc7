"""Top-k accuracy of root-cause rankings against known faults."""

from collections import defaultdict
from fractions import Fraction
import logging
from typing import Dict, List, Optional, Sequence

from src.errors import InputError

logger = logging.getLogger(__name__)

DEFAULT_K = 5


def _hits(ranked: Sequence[str], truths: Sequence[str], k: int) -> Fraction:
    if k < 1:
        raise InputError('k must be >= 1, got %s' % k)
    if not truths:
        raise InputError('A case needs at least one true root cause')
    top = set(ranked[:k])
    return Fraction(sum(1 for t in truths if t in top), min(k, len(truths)))


def ac_at_k(rankings: Sequence[Sequence[str]], truths: Sequence[Sequence[str]], k: int) -> float:
    """Mean over cases of the share of true root causes found in the top k.

    A case with |V| true causes counts |V & top_k| / min(k, |V|).

    :param rankings: One ranked service list per case.
    :param truths: The true root causes of each case.
    :param k: The cut-off.
    :return: The accuracy in [0, 1].
    """
    if len(rankings) != len(truths):
        raise InputError('%d rankings for %d cases' % (len(rankings), len(truths)))
    if not rankings:
        raise InputError('ac_at_k needs at least one case')
    total = sum((_hits(r, t, k) for r, t in zip(rankings, truths)), Fraction(0))
    return float(total / len(rankings))


def avg_at_k(rankings: Sequence[Sequence[str]], truths: Sequence[Sequence[str]], k: int = DEFAULT_K) -> float:
    """Average of AC@1 through AC@k."""
    if k < 1:
        raise InputError('k must be >= 1, got %s' % k)
    if len(rankings) != len(truths) or not rankings:
        raise InputError('avg_at_k needs matching, non-empty rankings and truths')
    total = Fraction(0)
    for j in range(1, k + 1):
        total += sum((_hits(r, t, j) for r, t in zip(rankings, truths)), Fraction(0)) / len(rankings)
    return float(total / k)


def rank_of(ranked: Sequence[str], truth: str) -> Optional[int]:
    """1-based rank of the true cause, None when it is not ranked."""
    try:
        return ranked.index(truth) + 1
    except ValueError:
        return None


class AccuracyTracker:
    """Accumulates per-case outcomes and summarises AC@k and Avg@k, overall and per group."""

    def __init__(self, ks: Sequence[int] = (1, 3, 5)) -> None:
        self.ks = tuple(ks)
        self.rankings: List[List[str]] = []
        self.truths: List[List[str]] = []
        self.groups: Dict[str, List[int]] = defaultdict(list)
        self.indicator_hits: List[bool] = []

    def __len__(self) -> int:
        return len(self.rankings)

    def add(self, ranked: Sequence[str], truths: Sequence[str], group: str = 'all',
            indicator_hit: Optional[bool] = None) -> None:
        self.groups[group].append(len(self.rankings))
        self.rankings.append(list(ranked))
        self.truths.append(list(truths))
        if indicator_hit is not None:
            self.indicator_hits.append(indicator_hit)

    def summary(self, indices: Optional[Sequence[int]] = None) -> Dict[str, float]:
        indices = range(len(self.rankings)) if indices is None else indices
        rankings = [self.rankings[i] for i in indices]
        truths = [self.truths[i] for i in indices]
        result = {'ac%d' % k: ac_at_k(rankings, truths, k) for k in self.ks}
        result['avg%d' % max(self.ks)] = avg_at_k(rankings, truths, max(self.ks))
        return result

    def per_group(self) -> Dict[str, Dict[str, float]]:
        return {group: self.summary(indices) for group, indices in sorted(self.groups.items())}

    @property
    def fine_top1(self) -> Optional[float]:
        """Share of cases whose true indicator tops the true service's indicator ranking."""
        if not self.indicator_hits:
            return None
        return sum(self.indicator_hits) / len(self.indicator_hits)
