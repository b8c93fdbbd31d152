"""Odds ratios, Mann-Whitney, subgroup TPR disparity, bootstrap and the fairness report."""
import math

import numpy as np
import pytest
from scipy.stats import mannwhitneyu

from config.experiment import SubgroupConfig
from evalmetrics.records import PredictionRecord
from fairness.disparity import (INSUFFICIENT_POSITIVES, SubgroupSpec, bootstrap_disparity, partition_specs,
                                tpr_fpr)
from fairness.plots import plot_region_heat
from fairness.report import category_records, exposure_odds_ratios, exposure_table, fairness_report, region_summary
from fairness.stats import ContingencyTable, bonferroni, mann_whitney_less, odds_ratio, u_statistic
from synthcohort.schema import UNLABELED


def _fisher_two_sided(a, b, c, d):
    row1, col1, n = a + b, a + c, a + b + c + d

    def prob(x):
        return math.comb(col1, x) * math.comb(n - col1, row1 - x) / math.comb(n, row1)

    observed = prob(a)
    support = range(max(0, row1 + col1 - n), min(row1, col1) + 1)
    return sum(prob(x) for x in support if prob(x) <= observed * (1 + 1e-7))


@pytest.mark.parametrize('table', [(3, 1, 1, 3), (8, 2, 1, 5), (20, 80, 10, 90)])
def test_fisher_p_matches_the_hypergeometric_sum(table):
    result = odds_ratio(ContingencyTable(*table))
    assert result.p_value == pytest.approx(_fisher_two_sided(*table), rel=1e-6)


def test_odds_ratio_and_haldane_correction():
    result = odds_ratio(ContingencyTable(20, 80, 10, 90))
    assert result.odds_ratio == pytest.approx(2.25)
    assert not result.corrected
    zero = odds_ratio(ContingencyTable(0, 5, 5, 5))
    assert zero.corrected
    assert zero.odds_ratio == pytest.approx(0.5 * 5.5 / (5.5 * 5.5))
    assert zero.as_dict()['haldane_corrected'] is True
    with pytest.raises(ValueError):
        ContingencyTable(-1, 0, 0, 0)
    with pytest.raises(ValueError):
        odds_ratio(ContingencyTable(0, 0, 0, 0))


def test_exact_mann_whitney():
    assert mann_whitney_less([1, 2, 3], [4, 5, 6]) == pytest.approx(0.05)
    assert mann_whitney_less([4, 5, 6], [1, 2, 3]) == pytest.approx(1.0)
    assert u_statistic([1, 2, 3], [4, 5, 6]) == 0.0
    x, y = [0.3, 1.1, 2.4, 0.7, 1.9, 3.3], [2.2, 4.1, 3.9, 2.8, 5.0, 1.5, 4.4]
    assert mann_whitney_less(x, y) == pytest.approx(mannwhitneyu(x, y, alternative='less', method='exact').pvalue)
    with pytest.raises(ValueError):
        mann_whitney_less([], [1.0])


def test_large_samples_use_the_normal_approximation(rng):
    x, y = rng.normal(0.0, 1.0, 15), rng.normal(0.5, 1.0, 15)
    expected = mannwhitneyu(x, y, alternative='less', method='asymptotic').pvalue
    assert mann_whitney_less(x, y) == pytest.approx(expected)


def test_bonferroni():
    adjusted = bonferroni([0.01, 0.4, float('nan')])
    assert adjusted[:2] == pytest.approx([0.03, 1.0])
    assert math.isnan(adjusted[2])


def test_subgroup_predicates():
    spec = SubgroupSpec.from_config(SubgroupConfig(name='female_mid', equals={'sex': ['F']},
                                                   ranges={'age_years': (34.0, 62.0)}))
    assert spec.is_intersectional
    assert spec.matches({'sex': 'F', 'age_years': 34.0})
    assert not spec.matches({'sex': 'F', 'age_years': 62.0})
    assert not spec.matches({'sex': 'M', 'age_years': 40.0})
    assert not spec.matches({'sex': 'F'})
    assert SubgroupSpec.population().matches({})
    assert not SubgroupSpec.from_config(SubgroupConfig(name='rural', equals={'population_quartile': [1]})) \
        .is_intersectional


def _record(i, score, label, **attrs):
    logit = math.log(score / (1 - score))
    return PredictionRecord(f'S{i}', (logit,), (label,), attrs)


def _labelled_records():
    # men: 4 positives, 3 detected; women: 4 positives, 1 detected
    rows = []
    for i, (sex, hit) in enumerate([('M', 1), ('M', 1), ('M', 1), ('M', 0), ('F', 1), ('F', 0), ('F', 0), ('F', 0)]):
        rows.append(_record(i, 0.9 if hit else 0.2, 1, sex=sex, age_years=40.0))
    for i, (sex, fp) in enumerate([('M', 0), ('M', 1), ('F', 0), ('F', 0)]):
        rows.append(_record(10 + i, 0.7 if fp else 0.1, 0, sex=sex, age_years=70.0))
    rows.append(_record(20, 0.9, UNLABELED, sex='F', age_years=5.0))
    return rows


def test_point_rates_and_disparity():
    records = _labelled_records()
    female = SubgroupSpec('female', equals=(('sex', ('F',)),))
    result = tpr_fpr(records, female, 0, 'glioma')
    assert result.tpr_population == pytest.approx(0.5)
    assert result.tpr_subgroup == pytest.approx(0.25)
    assert result.tpr_disparity == pytest.approx(-0.25)
    assert result.fpr_subgroup == 0.0 and result.fpr_population == pytest.approx(0.25)
    assert result.n_subgroup == 7 and result.n_positive == 4

    everyone = tpr_fpr(records, SubgroupSpec.population(), 0)
    assert everyone.tpr_disparity == 0.0


def test_subgroup_without_positives():
    children = SubgroupSpec('age_0_17', ranges=(('age_years', (0.0, 18.0)),))
    result = bootstrap_disparity(_labelled_records(), children, 0, 'glioma', n=10, iters=5)
    assert result.status == INSUFFICIENT_POSITIVES
    assert result.tpr_disparity is None and result.p_value is None
    assert result.n_subgroup == 1


def test_bootstrap_is_seeded_and_compares_same_class_positives():
    records = _labelled_records()
    female = SubgroupSpec('female', equals=(('sex', ('F',)),))
    a = bootstrap_disparity(records, female, 0, 'glioma', n=50, iters=8, seed=3)
    b = bootstrap_disparity(records, female, 0, 'glioma', n=50, iters=8, seed=3)
    assert a.replicates_subgroup == b.replicates_subgroup
    assert len(a.replicates_population) == 8
    assert np.mean(a.replicates_subgroup) < np.mean(a.replicates_population)
    assert a.p_value < 0.05

    same = bootstrap_disparity(records, SubgroupSpec.population(), 0, n=50, iters=8, seed=3)
    assert same.tpr_disparity == 0.0
    assert 0.0 < same.p_value <= 1.0


def test_partition_specs():
    specs = partition_specs(_labelled_records(), 'sex')
    assert [s.name for s in specs] == ['sex=F', 'sex=M']


def test_partition_disparities_cancel(rng):
    records = [_record(i, float(rng.uniform(0.05, 0.95)), int(rng.random() < 0.4),
                       region_code=int(rng.integers(0, 5)), sex='F' if rng.random() < 0.5 else 'M')
               for i in range(300)]
    for attribute in ('region_code', 'sex'):
        results = [tpr_fpr(records, spec, 0) for spec in partition_specs(records, attribute)]
        assert sum(r.n_positive for r in results) == sum(r.labels[0] == 1 for r in records)
        weighted = sum(r.n_positive * r.tpr_disparity for r in results if r.n_positive)
        assert weighted == pytest.approx(0.0, abs=1e-12)


def test_category_collapse():
    record = PredictionRecord('S1', (0.5, 2.0, -1.0), (0, 1, UNLABELED), {})
    collapsed, names = category_records([record], ['glioma', 'metastasis', 'edema'],
                                        {'glioma': 'neoplastic', 'metastasis': 'neoplastic', 'edema': 'inflammatory'})
    assert names == ['inflammatory', 'neoplastic']
    assert collapsed[0].logits == (-1.0, 2.0)
    assert collapsed[0].labels == (UNLABELED, 1)
    assert collapsed[0].task == 'category'


def _attributes(n, rng):
    return [{'sex': 'F' if i % 2 else 'M', 'age_years': float(rng.uniform(1, 90)), 'race_code': int(i % 3),
             'region_code': int(i % 9), 'population_quartile': int(i % 4) + 1, 'weekend_flag': int(i % 7 >= 5),
             'insurer_code': int(i % 3), 'scanner_code': int(i % 2) + 1,
             'turnaround_days': 3.0 if i % 4 == 0 else 1.0} for i in range(n)]


def test_exposure_tables(rng):
    attrs = _attributes(40, rng)
    table = exposure_table(attrs, lambda a: a['population_quartile'] == 1, long_days=2.0)
    assert (table.a, table.b, table.c, table.d) == (10, 0, 0, 30)
    rows = exposure_odds_ratios(attrs, long_days=2.0, n_regions=9)
    assert [r.exposure for r in rows][:2] == ['rural (population quartile 1)', 'weekend']
    assert len(rows) == 11
    assert rows[0].result.corrected and rows[0].result.odds_ratio > 1


def test_fairness_report_end_to_end(config, rng, tmp_path):
    attrs = _attributes(120, rng)
    labels = (rng.random((120, 2)) < 0.4).astype(int)
    logits = np.where(labels == 1, 1.0, -1.0) + rng.normal(0, 1.0, (120, 2))
    records = [PredictionRecord(f'S{i}', tuple(map(float, logits[i])), tuple(map(int, labels[i])), attrs[i])
               for i in range(120)]
    specs = [SubgroupSpec.from_config(s) for s in config.fairness.subgroups]
    report = fairness_report(records, specs, ['glioma', 'edema'], config.fairness,
                             {'glioma': 'neoplastic', 'edema': 'inflammatory'}, long_days=2.0, n_regions=9, seed=0)
    assert len(report.disparities) == 2 * sum(not s.is_intersectional for s in specs)
    assert len(report.intersectional) == 2 * sum(s.is_intersectional for s in specs)
    assert len(report.categories) == len(report.disparities)

    tested = [r for r in report.disparities + report.intersectional + report.categories if r.p_value is not None]
    for row in tested:
        assert row.p_adjusted == pytest.approx(min(1.0, row.p_value * len(tested)))
    assert all(abs(r.tpr_disparity) > config.fairness.tpr_threshold for r in report.flagged)
    doc = report.as_dict()
    assert {'threshold', 'disparities', 'intersectional', 'categories', 'exposures', 'flagged'} <= set(doc)

    summary = region_summary(report, 9)
    assert sorted(summary) == list(range(9))
    assert plot_region_heat(summary, tmp_path / 'plots' / 'regions.png').exists()
