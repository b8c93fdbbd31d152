"""Reproducible synthetic cohort generation.

Each study draws from its own ``SeedSequence((seed, index))`` stream, so any
shard of study indices can be generated independently and bit-identically.
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from config.experiment import CohortConfig, ConfigurationError, LabelSpec
from .grammar import QUALIFIERS, render_prose
from .schema import (ORIENTATIONS, Finding, LabelVector, RawReport, SensitiveAttributes,
                     SequenceVolume, VolumetricStudy)

logger = logging.getLogger(__name__)

TISSUE = {'T1': 0.55, 'T2': 0.35}
CSF = {'T1': 0.15, 'T2': 0.80}
BRAIN_RADII = (0.38, 0.42, 0.70)
VENTRICLE_RADII = (0.08, 0.12, 0.35)


def _unit_coords(grid: Tuple[int, int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    axes = [(np.arange(n) + 0.5) / n for n in grid]
    return np.meshgrid(*axes, indexing='ij')


def _ellipsoid(grid, center, radii) -> np.ndarray:
    u, v, w = _unit_coords(grid)
    d = ((u - center[0]) / radii[0]) ** 2 + ((v - center[1]) / radii[1]) ** 2 + ((w - center[2]) / radii[2]) ** 2
    return d <= 1.0


def _lesion_center(spec: LabelSpec, laterality: str) -> Tuple[float, float, float]:
    x, y, z = spec.site
    if laterality == 'left':
        x = 1.0 - x
    return x, y, z


def _lesion_mask(spec: LabelSpec, grid, laterality: str, severity: int, base_radius: float,
                 rng: np.random.Generator) -> np.ndarray:
    cx, cy, cz = _lesion_center(spec, laterality)
    jitter = rng.uniform(-0.03, 0.03, size=2)
    center = (cx + jitter[0], cy + jitter[1], cz)
    r_xy = base_radius + severity
    radii = (r_xy / grid[0], r_xy / grid[1], (1.0 + 0.5 * severity) / grid[2])
    mask = _ellipsoid(grid, center, radii)
    if not mask.any():
        idx = tuple(min(int(c * n), n - 1) for c, n in zip(center, grid))
        mask[idx] = True
    return mask


def _at_least_one(prevalence: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """Independent labels conditioned on at least one positive, one draw per class."""
    none_from = np.cumprod((1.0 - prevalence)[::-1])[::-1]
    y = np.zeros(len(prevalence), dtype=np.int8)
    for c, p in enumerate(prevalence):
        if y.any():
            q = p
        else:
            rest = 1.0 - none_from[c]
            q = p / rest if rest > 0 else 0.0
        y[c] = draws[c] < q
    if not y.any():
        # only reachable through rounding when the last positive class has q ~ 1
        y[int(np.flatnonzero(prevalence > 0)[-1])] = 1
    return y


def _sample_labels(config: CohortConfig, rng: np.random.Generator) -> np.ndarray:
    prevalence = np.array([spec.prevalence for spec in config.labels])
    draws = rng.random(len(prevalence) + 1)
    if config.normal_fraction is None:
        y = (draws[1:] < prevalence).astype(np.int8)
    elif draws[0] < config.normal_fraction:
        y = np.zeros(len(prevalence), dtype=np.int8)
    else:
        y = _at_least_one(prevalence, draws[1:])
    names = config.label_names
    for rule in config.cooccurrence:
        draw = rng.random()
        if y[names.index(rule.trigger)] and draw < rule.probability:
            y[names.index(rule.implied)] = 1
    return y


def _sample_attributes(config: CohortConfig, rng: np.random.Generator) -> SensitiveAttributes:
    marg = config.attributes
    bias = config.bias
    sex = 'F' if rng.random() < marg.female_prob else 'M'
    age = float(np.clip(rng.normal(marg.age_mean, marg.age_sd), *marg.age_range))
    race = int(rng.choice(len(marg.race_probs), p=marg.race_probs))
    region = int(rng.choice(len(marg.region_probs), p=marg.region_probs))
    quartile = int(rng.choice(len(marg.quartile_probs), p=marg.quartile_probs)) + 1
    weekend = int(rng.random() < marg.weekend_prob)
    insurer = int(rng.choice(len(marg.insurer_probs), p=marg.insurer_probs))
    scanner = int(rng.choice(len(marg.scanner_probs), p=marg.scanner_probs))

    logit = (bias.intercept + bias.rural_coef * (quartile == 1)
             + bias.region_coefs[region] + bias.weekend_coef * weekend)
    p_long = 1.0 / (1.0 + np.exp(-logit))
    if rng.random() < p_long:
        turnaround = bias.long_turnaround_days + float(rng.exponential(bias.long_tail_scale))
    else:
        turnaround = float(rng.uniform(0.0, bias.long_turnaround_days))
    return SensitiveAttributes(sex=sex, age_years=round(age, 2), race_code=race, region_code=region,
                               population_quartile=quartile, weekend_flag=weekend, insurer_code=insurer,
                               scanner_code=scanner, turnaround_days=round(turnaround, 4))


def _render_volume(kind: str, grid, brain: np.ndarray, ventricles: np.ndarray, age: float,
                   lesions: List[Tuple[np.ndarray, float]], config: CohortConfig,
                   rng: np.random.Generator) -> np.ndarray:
    _, v, _ = _unit_coords(grid)
    vol = np.zeros(grid, dtype=np.float64)
    vol[brain] = TISSUE[kind]
    vol[ventricles] = CSF[kind]
    # lesion-free age signal: linear anterior-posterior ramp whose slope follows age
    ramp = config.age_gradient * (age - 50.0) / 50.0 * (v - 0.5)
    vol = np.where(brain, vol + ramp, vol)
    for mask, delta in lesions:
        vol[mask] += delta
    noise = rng.normal(0.0, config.noise_sd, size=grid)
    vol = np.where(brain, vol + noise, vol)
    return np.clip(vol, 0.0, 1.0).astype(np.float32)


def _pick_roster(config: CohortConfig, rng: np.random.Generator) -> List[int]:
    chosen = []
    optional = []
    for idx, entry in enumerate(config.roster):
        draw = rng.random()
        if entry.required or draw < entry.inclusion_prob:
            chosen.append(idx)
        else:
            optional.append(idx)
    while len(chosen) < 2:
        pick = optional.pop(int(rng.integers(len(optional))))
        chosen.append(pick)
    return sorted(chosen)


def generate_study(config: CohortConfig, seed: int, index: int) -> VolumetricStudy:
    """Generate study ``index`` of the cohort defined by (config, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
    grid = tuple(config.grid)

    y = _sample_labels(config, rng)
    attributes = _sample_attributes(config, rng)

    brain = _ellipsoid(grid, (0.5, 0.5, 0.5), BRAIN_RADII)
    ventricles = _ellipsoid(grid, (0.5, 0.5, 0.5), VENTRICLE_RADII) & brain

    findings: List[Finding] = []
    masks: Dict[int, np.ndarray] = {}
    for label_id in np.flatnonzero(y):
        spec = config.labels[int(label_id)]
        laterality = ('left' if rng.random() < 0.5 else 'right') if spec.lateralized else 'midline'
        severity = int(rng.integers(1, 4))
        qualifier = QUALIFIERS[int(rng.integers(len(QUALIFIERS)))] if rng.random() < config.qualifier_prob else None
        masks[int(label_id)] = _lesion_mask(spec, grid, laterality, severity, config.lesion_radius, rng)
        findings.append(Finding(label_id=int(label_id), label_name=spec.name, phrase=spec.phrase,
                                laterality=laterality, severity=severity, qualifier=qualifier))

    sequences = []
    for roster_idx in _pick_roster(config, rng):
        entry = config.roster[roster_idx]
        name = entry.aliases[int(rng.integers(len(entry.aliases)))]
        lesions = [(masks[f.label_id], config.labels[f.label_id].contrast.get(entry.kind, 0.0)
                    * (0.8 + 0.1 * f.severity)) for f in findings]
        canonical = _render_volume(entry.kind, grid, brain, ventricles, attributes.age_years, lesions, config, rng)
        voxels = np.ascontiguousarray(np.transpose(canonical, ORIENTATIONS[entry.plane]))
        sequences.append(SequenceVolume(seq_name=name, kind=entry.kind, plane=entry.plane, voxels=voxels))

    study_name = config.study_names[int(rng.integers(len(config.study_names)))]
    report = RawReport(prose=render_prose(study_name, findings, rng), findings=tuple(findings))
    study = VolumetricStudy(study_id=f'S{seed:04d}-{index:06d}', study_name=study_name, sequences=sequences,
                            report=report, labels=LabelVector.from_array(y), attributes=attributes, masks=masks)
    study.check_invariants()
    return study


def generate_cohort(config: CohortConfig, seed: int, indices: Optional[range] = None) -> List[VolumetricStudy]:
    """Generate the cohort (or a shard of it) for a fixed (config, seed)."""
    if not config.roster:
        raise ConfigurationError('roster: a cohort needs at least one sequence protocol')
    for i, spec in enumerate(config.labels):
        if not 0.0 <= spec.prevalence <= 1.0:
            raise ConfigurationError(f'labels[{i}].prevalence must lie in [0, 1], got {spec.prevalence}')
    indices = indices if indices is not None else range(config.n_studies)
    studies = [generate_study(config, seed, i) for i in indices]
    n_abnormal = sum(s.abnormal for s in studies)
    logger.info(f'Generated {len(studies)} studies ({n_abnormal} abnormal) with seed {seed}',
                extra={'fields': {'n_studies': len(studies), 'n_abnormal': n_abnormal, 'seed': seed}})
    return studies
