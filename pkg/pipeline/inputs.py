"""Cohort views shared by the stages: splits, training examples and label matrices."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from objectives.augment import TrainingExample
from synthcohort.mapping import ACUITY_LEVELS, MappingTable, acuity_referral_map
from synthcohort.schema import LabelVector, VolumetricStudy
from textenc.summarize import summarize_with_client
from voltok.tokens import TokenGrid

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')


def assign_splits(studies: Sequence[VolumetricStudy], val_fraction: float, test_fraction: float,
                  seed: int) -> Dict[str, int]:
    """Seeded study-level split; every study lands in exactly one of train / val / test."""
    n = len(studies)
    n_test = max(1, int(round(test_fraction * n)))
    n_val = max(1, int(round(val_fraction * n)))
    if n_test + n_val >= n:
        raise ValueError(f'{n} studies cannot fill val ({n_val}) and test ({n_test}) and leave a training split')
    order = np.random.default_rng(np.random.SeedSequence((seed, 7))).permutation(n)
    for rank, idx in enumerate(order):
        studies[idx].split = 'test' if rank < n_test else ('val' if rank < n_test + n_val else 'train')
    counts = {split: sum(s.split == split for s in studies) for split in SPLITS}
    logger.info(f"splits: {counts}", extra={'fields': counts})
    return counts


def build_example(study: VolumetricStudy, grids: Dict[str, TokenGrid], summary_client=None) -> Optional[TrainingExample]:
    """A study's usable sequences (acquisition order) and its report; None if nothing survives the filter."""
    usable = []
    for seq in study.sequences:
        grid = grids[seq.seq_name]
        if grid.n_kept == 0:
            logger.warning(f'{study.study_id}: dropping {seq.seq_name}, no tokens above the background threshold')
            continue
        usable.append(grid)
    if not usable:
        logger.warning(f'{study.study_id}: no usable sequence; study excluded')
        return None
    return TrainingExample(study_id=study.study_id, study_name=study.study_name, grids=tuple(usable),
                           summary=summarize_with_client(study.report, study.study_id, summary_client),
                           prose=study.report.prose, abnormal=study.abnormal)


@dataclass
class CohortView:
    """Studies and their examples, indexed by split."""

    studies: List[VolumetricStudy]
    examples: List[TrainingExample]
    report_labels: Dict[str, Optional[LabelVector]]

    def __post_init__(self):
        self.by_id = {s.study_id: s for s in self.studies}

    def split(self, name: str) -> List[TrainingExample]:
        return [e for e in self.examples if self.by_id[e.study_id].split == name]

    def ids(self, name: str) -> List[str]:
        return [e.study_id for e in self.split(name)]

    def truth(self, ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.by_id[i].labels.array for i in ids]).astype(np.int64)

    def training_labels(self, ids: Sequence[str]) -> np.ndarray:
        """Report-derived labels (UNLABELED kept); ground truth where the labeler was never run."""
        rows = []
        for i in ids:
            vec = self.report_labels.get(i)
            rows.append((vec if vec is not None else self.by_id[i].labels).array)
        return np.stack(rows).astype(np.int64)

    def acuity_and_referrals(self, labels: np.ndarray, table: MappingTable):
        levels, referrals = [], []
        for row in labels:
            acuity, ref = acuity_referral_map(LabelVector.from_array(row), table)
            levels.append(ACUITY_LEVELS.index(acuity))
            referrals.append(ref)
        return np.asarray(levels, dtype=np.int64), np.stack(referrals).astype(np.int64)

    def ages(self, ids: Sequence[str]) -> np.ndarray:
        return np.asarray([self.by_id[i].attributes.age_years for i in ids], dtype=np.float64)

    def attributes(self, ids: Sequence[str]) -> List[dict]:
        return [self.by_id[i].attributes.as_dict() for i in ids]
