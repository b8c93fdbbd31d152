"""Training examples and the five CLIP-time augmentations."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.experiment import AugmentationPolicy
from hvit.batching import SequenceInput, StudyInput
from textenc.summarize import SummarizedReport
from textenc.vocab import UNK_NAME
from voltok.tokens import TokenGrid

logger = logging.getLogger(__name__)


@dataclass
class TrainingExample:
    """One study as seen by CLIP training: token grids in acquisition order plus its report."""

    study_id: str
    study_name: str
    grids: Tuple[TokenGrid, ...]
    summary: SummarizedReport
    prose: str
    abnormal: bool

    def text(self, use_summaries: bool = True, order: Optional[Sequence[int]] = None) -> str:
        if not use_summaries:
            return self.prose
        return self.summary.as_text(tuple(order) if order is not None else None)

    def to_input(self) -> StudyInput:
        return StudyInput(study_id=self.study_id, study_name=self.study_name,
                          sequences=[SequenceInput.from_grid(g) for g in self.grids])


@dataclass
class AugmentedExample:
    inputs: StudyInput
    text: str


def _coin(rng: np.random.Generator, p: float) -> bool:
    if p <= 0.0:
        return False
    if p >= 1.0:
        return True
    return bool(rng.random() < p)


def _drop_tokens(grid: TokenGrid, p: float, rng: np.random.Generator) -> TokenGrid:
    kept_idx = np.flatnonzero(grid.kept)
    if p <= 0.0 or len(kept_idx) == 0:
        return grid
    survive = rng.random(len(kept_idx)) >= p
    if not survive.any():
        survive[rng.integers(len(kept_idx))] = True
    kept = np.zeros_like(grid.kept)
    kept[kept_idx[survive]] = True
    return grid.with_kept(kept)


def _jitter_threshold(grid: TokenGrid, policy: AugmentationPolicy, rng: np.random.Generator) -> TokenGrid:
    low, high = policy.threshold_range
    candidate = grid.filtered(rng.uniform(low, high))
    return candidate if candidate.n_kept > 0 else grid


def augment_example(example: TrainingExample, policy: AugmentationPolicy, rng: np.random.Generator,
                    use_summaries: bool = True) -> AugmentedExample:
    order = None
    if use_summaries and _coin(rng, policy.shuffle_report_prob):
        order = rng.permutation(len(example.summary.items))

    sequences = []
    for grid in example.grids:
        if _coin(rng, policy.threshold_jitter_prob):
            grid = _jitter_threshold(grid, policy, rng)
        grid = _drop_tokens(grid, policy.token_drop_prob, rng)
        name = UNK_NAME if _coin(rng, policy.unk_name_prob) else grid.seq_name
        sequences.append(SequenceInput.from_grid(grid, name))

    if policy.sequence_drop_prob > 0.0 and len(sequences) > 1:
        keep = rng.random(len(sequences)) >= policy.sequence_drop_prob
        if not keep.any():
            keep[rng.integers(len(sequences))] = True
        sequences = [s for s, k in zip(sequences, keep) if k]

    return AugmentedExample(
        inputs=StudyInput(study_id=example.study_id, study_name=example.study_name, sequences=sequences),
        text=example.text(use_summaries, order),
    )


def apply_augmentations(batch: Sequence[TrainingExample], policy: AugmentationPolicy, rng: np.random.Generator,
                        use_summaries: bool = True) -> List[AugmentedExample]:
    """Augment every study of a batch independently; every toggle is its own probability."""
    return [augment_example(example, policy, rng, use_summaries) for example in batch]
