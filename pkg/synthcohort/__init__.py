"""Synthetic volumetric study generator."""
from .schema import (Finding, LabelVector, RawReport, SensitiveAttributes, SequenceVolume,
                     VolumetricStudy, UNLABELED, ORIENTATIONS)
from .generator import generate_cohort, generate_study
from .mapping import ACUITY_LEVELS, MappingTable, acuity_referral_map

__all__ = [
    'Finding', 'LabelVector', 'RawReport', 'SensitiveAttributes', 'SequenceVolume', 'VolumetricStudy',
    'UNLABELED', 'ORIENTATIONS', 'generate_cohort', 'generate_study',
    'ACUITY_LEVELS', 'MappingTable', 'acuity_referral_map',
]
