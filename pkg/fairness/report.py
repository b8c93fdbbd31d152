"""The fairness report: disparities per (class, subgroup), exposure odds ratios and category sections."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from config.experiment import FairnessConfig
from evalmetrics.records import PredictionRecord
from synthcohort.schema import UNLABELED
from .disparity import DisparityResult, SubgroupSpec, bootstrap_disparity
from .stats import ContingencyTable, OddsRatioResult, bonferroni, odds_ratio

logger = logging.getLogger(__name__)


@dataclass
class ExposureRow:
    exposure: str
    table: ContingencyTable
    result: OddsRatioResult

    def as_dict(self) -> dict:
        t = self.table
        return {'exposure': self.exposure, 'a': t.a, 'b': t.b, 'c': t.c, 'd': t.d, **self.result.as_dict()}


@dataclass
class FairnessReport:
    threshold: float
    disparities: List[DisparityResult] = field(default_factory=list)
    intersectional: List[DisparityResult] = field(default_factory=list)
    categories: List[DisparityResult] = field(default_factory=list)
    exposures: List[ExposureRow] = field(default_factory=list)

    @property
    def flagged(self) -> List[DisparityResult]:
        rows = self.disparities + self.intersectional + self.categories
        return [r for r in rows if r.tpr_disparity is not None and abs(r.tpr_disparity) > self.threshold]

    def as_dict(self) -> dict:
        return {
            'threshold': self.threshold,
            'disparities': [r.as_dict() for r in self.disparities],
            'intersectional': [r.as_dict() for r in self.intersectional],
            'categories': [r.as_dict() for r in self.categories],
            'exposures': [r.as_dict() for r in self.exposures],
            'flagged': [{'subgroup': r.subgroup, 'class_name': r.class_name, 'tpr_disparity': r.tpr_disparity}
                        for r in self.flagged],
        }


def exposure_table(attributes: Sequence[Dict], exposed, long_days: float) -> ContingencyTable:
    """Exposure x long turnaround (turnaround_days > long_days)."""
    a = b = c = d = 0
    for attrs in attributes:
        long = attrs['turnaround_days'] > long_days
        if exposed(attrs):
            a, b = a + long, b + (not long)
        else:
            c, d = c + long, d + (not long)
    return ContingencyTable(int(a), int(b), int(c), int(d))


def exposure_odds_ratios(attributes: Sequence[Dict], long_days: float, n_regions: int) -> List[ExposureRow]:
    exposures = {
        'rural (population quartile 1)': lambda a: a['population_quartile'] == 1,
        'weekend': lambda a: a['weekend_flag'] == 1,
    }
    for region in range(n_regions):
        exposures[f'region {region}'] = lambda a, r=region: a['region_code'] == r
    rows = []
    for name, exposed in exposures.items():
        table = exposure_table(attributes, exposed, long_days)
        rows.append(ExposureRow(name, table, odds_ratio(table)))
    return rows


def category_records(records: Sequence[PredictionRecord], class_names: Sequence[str],
                     categories: Dict[str, str]) -> Tuple[List[PredictionRecord], List[str]]:
    """Collapse classes to diagnostic categories: positive if any member is, score = max member logit."""
    names = sorted(set(categories[c] for c in class_names))
    members = {n: [i for i, c in enumerate(class_names) if categories[c] == n] for n in names}
    collapsed = []
    for r in records:
        logits, labels = [], []
        for n in names:
            idx = members[n]
            logits.append(max(r.logits[i] for i in idx))
            values = [r.labels[i] for i in idx]
            labels.append(1 if 1 in values else (UNLABELED if UNLABELED in values else 0))
        collapsed.append(PredictionRecord(study_id=r.study_id, logits=tuple(logits), labels=tuple(labels),
                                          attributes=r.attributes, split=r.split, task='category'))
    return collapsed, names


def _audit(records, specs, class_names, cfg: FairnessConfig, seed: int) -> List[DisparityResult]:
    rows = []
    for c, name in enumerate(class_names):
        for s, spec in enumerate(specs):
            rows.append(bootstrap_disparity(records, spec, c, name, n=cfg.bootstrap_size, iters=cfg.bootstrap_iters,
                                            seed=seed + 1000 * c + s, threshold=cfg.decision_threshold))
    return rows


def fairness_report(records: Sequence[PredictionRecord], specs: Sequence[SubgroupSpec], class_names: Sequence[str],
                    cfg: FairnessConfig, categories: Dict[str, str], long_days: float, n_regions: int,
                    seed: int = 0) -> FairnessReport:
    single = [s for s in specs if not s.is_intersectional]
    joint = [s for s in specs if s.is_intersectional]
    report = FairnessReport(threshold=cfg.tpr_threshold)
    report.disparities = _audit(records, single, class_names, cfg, seed)
    report.intersectional = _audit(records, joint, class_names, cfg, seed + 1)
    collapsed, category_names = category_records(records, class_names, categories)
    report.categories = _audit(collapsed, single, category_names, cfg, seed + 2)
    report.exposures = exposure_odds_ratios([r.attributes for r in records], long_days, n_regions)

    tested = [r for r in report.disparities + report.intersectional + report.categories if r.p_value is not None]
    for row, adjusted in zip(tested, bonferroni([r.p_value for r in tested])):
        row.p_adjusted = adjusted
    logger.info(f'fairness report: {len(tested)} tested disparities, {len(report.flagged)} flagged above '
                f'{cfg.tpr_threshold}', extra={'fields': {'tested': len(tested), 'flagged': len(report.flagged)}})
    return report


def region_summary(report: FairnessReport, n_regions: int) -> Dict[int, Dict[str, float]]:
    """Per region: turnaround odds ratio and mean TPR disparity over region subgroups when audited."""
    summary = {}
    for region in range(n_regions):
        row = next((e for e in report.exposures if e.exposure == f'region {region}'), None)
        disparities = [r.tpr_disparity for r in report.disparities + report.intersectional
                       if r.tpr_disparity is not None and f'region_{region}' in r.subgroup]
        summary[region] = {
            'odds_ratio': row.result.odds_ratio if row else float('nan'),
            'mean_tpr_disparity': float(np.mean(disparities)) if disparities else float('nan'),
        }
    return summary
