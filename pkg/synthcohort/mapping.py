"""Diagnosis -> acuity / referral mapping."""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from config.experiment import ConfigurationError, LabelSpec
from .schema import LabelVector

ACUITY_LEVELS = ('normal', 'medium', 'high')


@dataclass(frozen=True)
class MappingEntry:
    label_name: str
    acuity: str
    referrals: Tuple[str, ...]


@dataclass(frozen=True)
class MappingTable:
    """One entry per label class, in label order."""

    entries: Tuple[MappingEntry, ...]

    @classmethod
    def from_labels(cls, specs: Sequence[LabelSpec]) -> 'MappingTable':
        return cls(tuple(MappingEntry(s.name, s.acuity, tuple(s.referrals)) for s in specs))

    @property
    def referral_names(self) -> List[str]:
        names = sorted({r for entry in self.entries for r in entry.referrals})
        return names


def acuity_referral_map(labels: LabelVector, table: MappingTable) -> Tuple[str, np.ndarray]:
    """Return (acuity, referral multi-hot) for a label vector.

    Acuity is the highest rank over positive labels; referrals are the union of
    per-label referrals. An all-zero vector maps to ('normal', no referrals).
    """
    if len(labels) != len(table.entries):
        raise ConfigurationError(
            f'mapping table covers {len(table.entries)} classes but labels have {len(labels)}')
    referral_names = table.referral_names
    referrals = np.zeros(len(referral_names), dtype=np.int8)
    rank = 0
    for idx in labels.positives:
        entry = table.entries[idx]
        if entry.acuity not in ACUITY_LEVELS:
            raise ConfigurationError(f'label {entry.label_name} has unknown acuity {entry.acuity!r}')
        rank = max(rank, ACUITY_LEVELS.index(entry.acuity))
        for name in entry.referrals:
            referrals[referral_names.index(name)] = 1
    return ACUITY_LEVELS[rank], referrals
