"""Domain records for one synthetic patient study."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

UNLABELED = -1

# plane -> axis permutation applied to the canonical (X, Y, Z) grid
ORIENTATIONS: Dict[str, Tuple[int, int, int]] = {
    'axial': (0, 1, 2),
    'coronal': (0, 2, 1),
    'sagittal': (1, 2, 0),
}

SEVERITY_WORDS = {1: 'Small', 2: 'Moderate', 3: 'Large'}


@dataclass(frozen=True)
class Finding:
    """Structured finding; ``sentence`` is how it appears in the prose."""

    label_id: int
    label_name: str
    phrase: str
    laterality: str
    severity: int
    qualifier: Optional[str] = None

    @property
    def text(self) -> str:
        return f'{SEVERITY_WORDS[self.severity]} {self.laterality} {self.phrase}'

    @property
    def sentence(self) -> str:
        if self.qualifier:
            return f'{self.text}, {self.qualifier}.'
        return f'{self.text}.'

    def to_dict(self) -> dict:
        return {
            'label_id': self.label_id, 'label_name': self.label_name, 'phrase': self.phrase,
            'laterality': self.laterality, 'severity': self.severity, 'qualifier': self.qualifier,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Finding':
        return cls(**data)


@dataclass(frozen=True)
class RawReport:
    prose: str
    findings: Tuple[Finding, ...] = ()

    @property
    def is_normal(self) -> bool:
        return not self.findings


@dataclass(frozen=True)
class LabelVector:
    """Multi-hot diagnosis vector. ``UNLABELED`` marks a class the labeler could not decide."""

    y: Tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1, UNLABELED) for v in self.y):
            raise ValueError(f'label entries must be 0, 1 or UNLABELED, got {self.y}')

    @classmethod
    def from_array(cls, values) -> 'LabelVector':
        return cls(tuple(int(v) for v in np.asarray(values).ravel()))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.y, dtype=np.int8)

    @property
    def positives(self) -> List[int]:
        return [i for i, v in enumerate(self.y) if v == 1]

    @property
    def is_normal(self) -> bool:
        return not self.positives

    @property
    def is_complete(self) -> bool:
        return UNLABELED not in self.y

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class SensitiveAttributes:
    sex: str
    age_years: float
    race_code: int
    region_code: int
    population_quartile: int
    weekend_flag: int
    insurer_code: int
    scanner_code: int
    turnaround_days: float

    def __post_init__(self):
        if self.turnaround_days < 0:
            raise ValueError('turnaround_days must be >= 0')

    def as_dict(self) -> dict:
        return {
            'sex': self.sex, 'age_years': self.age_years, 'race_code': self.race_code,
            'region_code': self.region_code, 'population_quartile': self.population_quartile,
            'weekend_flag': self.weekend_flag, 'insurer_code': self.insurer_code,
            'scanner_code': self.scanner_code, 'turnaround_days': self.turnaround_days,
        }


@dataclass
class SequenceVolume:
    seq_name: str
    kind: str
    plane: str
    voxels: np.ndarray

    def __post_init__(self):
        if self.plane not in ORIENTATIONS:
            raise ValueError(f'unknown plane {self.plane!r}')
        if self.voxels.ndim != 3:
            raise ValueError('voxels must be a 3D grid')
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError(f'sequence {self.seq_name} has non-finite intensities')

    @property
    def orientation(self) -> Tuple[int, int, int]:
        return ORIENTATIONS[self.plane]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.voxels.shape)

    def align_mask(self, mask: np.ndarray) -> np.ndarray:
        """Map a canonical-grid mask onto this sequence's voxel grid."""
        return np.transpose(mask, self.orientation)


@dataclass
class VolumetricStudy:
    study_id: str
    study_name: str
    sequences: List[SequenceVolume]
    report: RawReport
    labels: LabelVector
    attributes: SensitiveAttributes
    masks: Dict[int, np.ndarray] = field(default_factory=dict)
    split: str = 'train'

    @property
    def abnormal(self) -> bool:
        return not self.labels.is_normal

    @property
    def canonical_shape(self) -> Tuple[int, int, int]:
        first = self.sequences[0]
        inverse = np.argsort(first.orientation)
        return tuple(int(first.voxels.shape[i]) for i in inverse)

    def check_invariants(self) -> None:
        if len(self.sequences) < 2:
            raise ValueError(f'study {self.study_id} has fewer than two sequences')
        for label_id in self.labels.positives:
            mask = self.masks.get(label_id)
            if mask is None or not mask.any():
                raise ValueError(f'study {self.study_id}: positive label {label_id} has no lesion mask')
            if tuple(mask.shape) != self.canonical_shape:
                raise ValueError(f'study {self.study_id}: mask {label_id} does not fit the grid')
