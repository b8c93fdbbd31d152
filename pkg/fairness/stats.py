"""2x2 odds ratios with Fisher exact p-values, and the one-sided Mann-Whitney U test."""
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import fisher_exact, mannwhitneyu, rankdata

EXACT_MANN_WHITNEY_LIMIT = 16


@dataclass(frozen=True)
class ContingencyTable:
    """Exposure x outcome counts: a = exposed & outcome, b = exposed & no outcome,
    c = unexposed & outcome, d = unexposed & no outcome."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError('contingency counts must be non-negative')

    @property
    def has_zero_cell(self) -> bool:
        return 0 in (self.a, self.b, self.c, self.d)

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d


@dataclass(frozen=True)
class OddsRatioResult:
    odds_ratio: float
    p_value: float
    corrected: bool

    def as_dict(self) -> dict:
        return {'odds_ratio': self.odds_ratio, 'p_value': self.p_value, 'haldane_corrected': self.corrected}


def odds_ratio(t: ContingencyTable) -> OddsRatioResult:
    """OR = ad / bc, Haldane-Anscombe (+0.5 per cell) when any cell is zero; two-sided Fisher p."""
    if t.n == 0:
        raise ValueError('empty contingency table')
    if t.has_zero_cell:
        value = ((t.a + 0.5) * (t.d + 0.5)) / ((t.b + 0.5) * (t.c + 0.5))
    else:
        value = (t.a * t.d) / (t.b * t.c)
    _, p = fisher_exact([[t.a, t.b], [t.c, t.d]], alternative='two-sided')
    return OddsRatioResult(odds_ratio=float(value), p_value=float(p), corrected=t.has_zero_cell)


def _exact_less(x: np.ndarray, y: np.ndarray) -> float:
    """P(U <= U_obs) over every assignment of the pooled midranks to the first sample."""
    pooled = np.concatenate([x, y])
    ranks = rankdata(pooled)
    n1 = len(x)
    offset = n1 * (n1 + 1) / 2.0
    u_obs = ranks[:n1].sum() - offset
    total = 0
    at_most = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        total += 1
        if ranks[list(idx)].sum() - offset <= u_obs + 1e-9:
            at_most += 1
    return at_most / total


def mann_whitney_less(x: Sequence[float], y: Sequence[float]) -> float:
    """One-sided p for "x tends to be smaller than y".

    Exact enumeration when the pooled size is at most 16, else the normal
    approximation with tie correction.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0 or len(y) == 0:
        raise ValueError('Mann-Whitney U needs two non-empty samples')
    if len(x) + len(y) <= EXACT_MANN_WHITNEY_LIMIT:
        return _exact_less(x, y)
    return float(mannwhitneyu(x, y, alternative='less', method='asymptotic').pvalue)


def u_statistic(x: Sequence[float], y: Sequence[float]) -> float:
    ranks = rankdata(np.concatenate([x, y]))
    n1 = len(x)
    return float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)


def bonferroni(p_values: Sequence[float]) -> list:
    m = len(p_values)
    return [min(1.0, p * m) if not math.isnan(p) else p for p in p_values]
