"""Abnormal-upsampling study sampler."""
from typing import Iterator, List, Sequence, Tuple

import numpy as np


class AbnormalUpsampler:
    """Draw studies with abnormal ones weighted ``factor`` times a normal one.

    Streams draw with replacement. ``draw_batch`` draws distinct studies (every
    sequence of a study travels in the batch only once) while keeping the
    upsampled abnormal share.
    """

    def __init__(self, study_ids: Sequence[str], abnormal: Sequence[bool], factor: float, seed: int):
        if len(study_ids) != len(abnormal):
            raise ValueError('study_ids and abnormal flags differ in length')
        if not study_ids:
            raise ValueError('cannot sample from an empty cohort')
        if factor < 1.0:
            raise ValueError(f'abnormal_upsample must be >= 1, got {factor}')
        self.study_ids = list(study_ids)
        self.abnormal = np.asarray(abnormal, dtype=bool)
        self.factor = float(factor)
        weights = np.where(self.abnormal, self.factor, 1.0)
        self.probs = weights / weights.sum()
        self.rng = np.random.default_rng(seed)

    @property
    def base_rate(self) -> float:
        return float(self.abnormal.mean())

    @property
    def expected_abnormal_share(self) -> float:
        base = self.base_rate
        return self.factor * base / (self.factor * base + (1.0 - base))

    def draw(self, n: int) -> np.ndarray:
        return self.rng.choice(len(self.study_ids), size=n, replace=True, p=self.probs)

    def draw_batch(self, size: int) -> np.ndarray:
        """Distinct study indices; the abnormal count is Binomial(size, expected share).

        The count is clipped to what the cohort holds on each side, so a batch
        as large as the cohort returns every study.
        """
        size = min(size, len(self.study_ids))
        abnormal = np.flatnonzero(self.abnormal)
        normal = np.flatnonzero(~self.abnormal)
        k = int(self.rng.binomial(size, self.expected_abnormal_share))
        k = min(max(k, size - len(normal)), len(abnormal))
        picks = np.concatenate([self.rng.choice(abnormal, size=k, replace=False),
                                self.rng.choice(normal, size=size - k, replace=False)])
        return self.rng.permutation(picks.astype(np.int64))

    def stream(self) -> Iterator[str]:
        while True:
            for idx in self.draw(256):
                yield self.study_ids[idx]


def build_sampler(manifest: Sequence[Tuple[str, bool]], abnormal_upsample: float = 4.0,
                  seed: int = 0) -> AbnormalUpsampler:
    """``manifest`` is (study_id, abnormal) per study."""
    ids: List[str] = [study_id for study_id, _ in manifest]
    flags = [bool(flag) for _, flag in manifest]
    return AbnormalUpsampler(ids, flags, abnormal_upsample, seed)
