"""Subgroup predicates, TPR/FPR disparity and the bootstrap protocol."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.experiment import SubgroupConfig
from evalmetrics.records import PredictionRecord
from synthcohort.schema import UNLABELED
from .stats import mann_whitney_less

INSUFFICIENT_POSITIVES = 'insufficient positives'


@dataclass(frozen=True)
class SubgroupSpec:
    """Conjunction of attribute conditions; an empty spec matches everyone."""

    name: str
    equals: Tuple[Tuple[str, Tuple], ...] = ()
    ranges: Tuple[Tuple[str, Tuple[float, float]], ...] = ()

    @classmethod
    def from_config(cls, cfg: SubgroupConfig) -> 'SubgroupSpec':
        return cls(name=cfg.name,
                   equals=tuple((k, tuple(v)) for k, v in sorted(cfg.equals.items())),
                   ranges=tuple((k, tuple(v)) for k, v in sorted(cfg.ranges.items())))

    @classmethod
    def population(cls) -> 'SubgroupSpec':
        return cls(name='population')

    @property
    def attributes(self) -> List[str]:
        return [k for k, _ in self.equals] + [k for k, _ in self.ranges]

    @property
    def is_intersectional(self) -> bool:
        return len(set(self.attributes)) >= 2

    def matches(self, attributes: Dict) -> bool:
        for key, allowed in self.equals:
            if attributes.get(key) not in allowed:
                return False
        for key, (low, high) in self.ranges:
            value = attributes.get(key)
            if value is None or not low <= value < high:
                return False
        return True


@dataclass
class DisparityResult:
    subgroup: str
    class_name: str
    n_subgroup: int
    n_positive: int
    status: str = 'ok'
    tpr_subgroup: Optional[float] = None
    tpr_population: Optional[float] = None
    fpr_subgroup: Optional[float] = None
    fpr_population: Optional[float] = None
    replicates_subgroup: List[float] = field(default_factory=list)
    replicates_population: List[float] = field(default_factory=list)
    p_value: Optional[float] = None
    p_adjusted: Optional[float] = None

    @property
    def tpr_disparity(self) -> Optional[float]:
        if self.tpr_subgroup is None or self.tpr_population is None:
            return None
        return self.tpr_subgroup - self.tpr_population

    @property
    def fpr_disparity(self) -> Optional[float]:
        if self.fpr_subgroup is None or self.fpr_population is None:
            return None
        return self.fpr_subgroup - self.fpr_population

    def as_dict(self) -> dict:
        return {
            'subgroup': self.subgroup, 'class_name': self.class_name, 'status': self.status,
            'n_subgroup': self.n_subgroup, 'n_positive': self.n_positive,
            'tpr_subgroup': self.tpr_subgroup, 'tpr_population': self.tpr_population,
            'tpr_disparity': self.tpr_disparity, 'fpr_subgroup': self.fpr_subgroup,
            'fpr_population': self.fpr_population, 'fpr_disparity': self.fpr_disparity,
            'p_value': self.p_value, 'p_adjusted': self.p_adjusted,
            'replicates_subgroup': self.replicates_subgroup, 'replicates_population': self.replicates_population,
        }


def _outcomes(records: Sequence[PredictionRecord], class_index: int, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray([r.labels[class_index] for r in records])
    predicted = np.asarray([r.scores[class_index] >= threshold for r in records], dtype=bool)
    return labels, predicted


def _rate(predicted: np.ndarray, mask: np.ndarray) -> Optional[float]:
    n = int(mask.sum())
    return float(predicted[mask].sum() / n) if n else None


def tpr_fpr(records: Sequence[PredictionRecord], spec: SubgroupSpec, class_index: int, class_name: str = None,
            threshold: float = 0.5) -> DisparityResult:
    """Point TPR and FPR for the subgroup and the whole population (UNLABELED entries excluded)."""
    labels, predicted = _outcomes(records, class_index, threshold)
    in_group = np.asarray([spec.matches(r.attributes) for r in records], dtype=bool)
    labeled = labels != UNLABELED
    pos, neg = labeled & (labels == 1), labeled & (labels == 0)
    result = DisparityResult(subgroup=spec.name, class_name=class_name or str(class_index),
                             n_subgroup=int(in_group.sum()), n_positive=int((in_group & pos).sum()),
                             tpr_population=_rate(predicted, pos), fpr_population=_rate(predicted, neg),
                             fpr_subgroup=_rate(predicted, in_group & neg))
    if result.n_positive == 0:
        result.status = INSUFFICIENT_POSITIVES
        return result
    result.tpr_subgroup = _rate(predicted, in_group & pos)
    return result


def bootstrap_disparity(records: Sequence[PredictionRecord], spec: SubgroupSpec, class_index: int,
                        class_name: str = None, n: int = 200, iters: int = 20, seed: int = 0,
                        threshold: float = 0.5) -> DisparityResult:
    """Per iteration, TPR of ``n`` resampled subgroup positives and of ``n`` resampled population
    positives of the same class; p is the one-sided U test of subgroup < population."""
    result = tpr_fpr(records, spec, class_index, class_name, threshold)
    if result.status != 'ok':
        return result
    labels, predicted = _outcomes(records, class_index, threshold)
    in_group = np.asarray([spec.matches(r.attributes) for r in records], dtype=bool)
    group_pos = np.flatnonzero(in_group & (labels == 1))
    population_pos = np.flatnonzero(labels == 1)
    rng = np.random.default_rng(seed)
    for _ in range(iters):
        result.replicates_subgroup.append(float(predicted[rng.choice(group_pos, size=n, replace=True)].mean()))
        result.replicates_population.append(
            float(predicted[rng.choice(population_pos, size=n, replace=True)].mean()))
    result.p_value = mann_whitney_less(result.replicates_subgroup, result.replicates_population)
    return result


def partition_specs(records: Sequence[PredictionRecord], attribute: str) -> List[SubgroupSpec]:
    """One spec per observed value of ``attribute``."""
    values = sorted({r.attributes.get(attribute) for r in records}, key=str)
    return [SubgroupSpec(name=f'{attribute}={v}', equals=((attribute, (v,)),)) for v in values]

