"""Modality-drop and training-set-scaling harnesses."""
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from hvit.batching import SequenceInput, StudyInput
from .classification import auroc_or_nan

logger = logging.getLogger(__name__)

ScoreFn = Callable[[List[StudyInput]], np.ndarray]


def drop_sequences(example, pattern: str) -> StudyInput:
    """The study without sequences whose name matches ``pattern``; a study never loses its last sequence."""
    regex = re.compile(pattern, re.IGNORECASE)
    kept = [g for g in example.grids if not regex.search(g.seq_name)]
    if not kept:
        logger.warning(f'{example.study_id}: every sequence matches {pattern!r}; keeping the study intact')
        kept = list(example.grids)
    return StudyInput(study_id=example.study_id, study_name=example.study_name,
                      sequences=[SequenceInput.from_grid(g) for g in kept])


@dataclass
class ModalityDropResult:
    pattern: str
    auc_full: Dict[str, float]
    auc_dropped: Dict[str, float]

    @property
    def delta(self) -> Dict[str, float]:
        return {name: self.auc_full[name] - self.auc_dropped[name] for name in self.auc_full}

    def as_dict(self) -> dict:
        return {'pattern': self.pattern, 'auc_full': self.auc_full, 'auc_dropped': self.auc_dropped,
                'delta_auc': self.delta}


def modality_drop_eval(score_fn: ScoreFn, examples: Sequence, labels: np.ndarray, class_names: Sequence[str],
                       pattern: str) -> ModalityDropResult:
    """Per-class AUROC with all sequences, then with ``pattern``-matching sequences removed at inference."""
    full = score_fn([e.to_input() for e in examples])
    dropped = score_fn([drop_sequences(e, pattern) for e in examples])
    labels = np.asarray(labels)
    return ModalityDropResult(
        pattern=pattern,
        auc_full={n: auroc_or_nan(full[:, i], labels[:, i]) for i, n in enumerate(class_names)},
        auc_dropped={n: auroc_or_nan(dropped[:, i], labels[:, i]) for i, n in enumerate(class_names)},
    )


@dataclass
class ScalingReport:
    metric: str
    values: Dict[float, List[float]] = field(default_factory=dict)

    @property
    def medians(self) -> Dict[float, float]:
        return {f: float(np.median(v)) for f, v in sorted(self.values.items())}

    @property
    def inversions(self) -> int:
        """Adjacent fraction pairs whose median decreases."""
        meds = list(self.medians.values())
        return sum(1 for a, b in zip(meds, meds[1:]) if b < a)

    @property
    def monotone(self) -> bool:
        return self.inversions <= 1

    def as_dict(self) -> dict:
        return {'metric': self.metric, 'values': {str(f): v for f, v in self.values.items()},
                'medians': {str(f): m for f, m in self.medians.items()}, 'inversions': self.inversions,
                'monotone': self.monotone}


def scaling_harness(fractions: Sequence[float], seeds: Sequence[int],
                    pipeline: Callable[[float, int], Dict[str, float]], metric: str = 'top1') -> ScalingReport:
    """Run ``pipeline(fraction, seed)`` for every pair and report the median metric per fraction."""
    if len(seeds) < 3:
        logger.warning(f'scaling medians over {len(seeds)} seeds; at least 3 are recommended')
    report = ScalingReport(metric=metric)
    for fraction in sorted(fractions):
        if not 0 < fraction <= 1:
            raise ValueError(f'cohort fraction must be in (0, 1], got {fraction}')
        report.values[fraction] = []
        for seed in seeds:
            metrics = pipeline(fraction, seed)
            report.values[fraction].append(float(metrics[metric]))
            logger.info(f'scaling fraction={fraction} seed={seed}: {metric}={metrics[metric]:.4f}',
                        extra={'fields': {'fraction': fraction, 'seed': seed, **metrics}})
    return report
