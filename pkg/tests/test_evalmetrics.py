"""Retrieval, AUROC, calibration, co-occurrence, NPR and the evaluation harnesses."""
import itertools

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from evalmetrics.classification import (auroc, auroc_or_nan, cooccurrence_matrix, mauc, reliability_diagram,
                                        roc_points)
from evalmetrics.harness import ScalingReport, drop_sequences, modality_drop_eval, scaling_harness
from evalmetrics.neighbors import nearest_neighbors, normalized_positive_rate, npr
from evalmetrics.plots import plot_cooccurrence, plot_radar, plot_reliability, plot_roc_curves
from evalmetrics.records import PredictionRecord, read_records, records_to_arrays, write_records
from evalmetrics.retrieval import cosine_similarity_matrix, grouped_retrieval, topk_retrieval
from objectives.augment import TrainingExample
from synthcohort.schema import UNLABELED
from textenc.summarize import SummarizedReport
from voltok.tokens import TokenGrid


def _pair_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auroc_matches_pair_counting(rng):
    scores = np.round(rng.random(60), 1)
    labels = (rng.random(60) < 0.3).astype(int)
    assert auroc(scores, labels) == pytest.approx(_pair_count_auc(scores, labels))
    assert auroc(scores, labels) == pytest.approx(roc_auc_score(labels, scores))


def test_auroc_is_exact_on_random_instances(rng):
    for _ in range(100):
        n = int(rng.integers(2, 201))
        scores = np.round(rng.random(n), 2)
        labels = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
        labels[:2] = (0, 1)
        pos, neg = scores[labels == 1], scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        assert auroc(scores, labels) == wins / (len(pos) * len(neg))


def test_auroc_ignores_unlabeled_and_needs_both_outcomes():
    assert auroc([0.1, 0.9, 0.5], [0, 1, UNLABELED]) == 1.0
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])
    assert np.isnan(auroc_or_nan([0.1, 0.2], [0, UNLABELED]))
    assert roc_points([0.1, 0.2], [0, 0]) is None


def test_topk_counts_ties_against_the_match():
    assert topk_retrieval(np.eye(4), 1) == 1.0
    flat = np.ones((4, 4))
    assert topk_retrieval(flat, 1) == 0.0
    assert topk_retrieval(flat, 4) == 1.0
    with pytest.raises(ValueError):
        topk_retrieval(np.ones((2, 3)), 1)


def test_grouped_retrieval(rng):
    v = rng.normal(size=(23, 8))
    result = grouped_retrieval(v, v.copy(), group_size=5, seed=0)
    assert result.top == {1: 1.0, 5: 1.0}
    assert result.n_groups == 4
    assert result.as_dict()['group_size'] == 5
    shuffled = grouped_retrieval(v, rng.normal(size=(23, 8)), group_size=5, seed=0, ks=(5,))
    assert shuffled.top[5] == 1.0
    with pytest.raises(ValueError):
        grouped_retrieval(v[:3], v[:3], group_size=5)


def test_cosine_similarity_refuses_zero_vectors():
    with pytest.raises(ValueError):
        cosine_similarity_matrix(np.zeros((1, 3)), np.ones((2, 3)))
    sim = cosine_similarity_matrix(np.array([[1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 3.0]]))
    np.testing.assert_allclose(sim, [[1.0, 0.0]])


def test_reliability_bins_partition_the_scores():
    scores = np.array([0.05, 0.08, 0.15, 0.55, 0.95, 1.0])
    labels = np.array([0, 1, 0, 1, 1, 0])
    bins = reliability_diagram(scores, labels, bin_width=0.1)
    assert [b.count for b in bins] == [2, 1, 1, 2]
    assert sum(b.count for b in bins) == len(scores)
    first, last = bins[0], bins[-1]
    assert first.accuracy == 0.5 and first.confidence == pytest.approx(0.065)
    assert first.balanced_accuracy == 0.5
    assert last.lower == pytest.approx(0.9) and last.accuracy == 0.5 and last.balanced_accuracy == 0.5
    assert bins[2].balanced_accuracy == 1.0


def test_reliability_edges_open_their_bin():
    scores = np.array([0.0, 0.29999, 0.3, 0.6, 0.9, 0.95, 1.0])
    labels = np.array([0, 0, 1, 1, 0, 1, 1])
    bins = reliability_diagram(scores, labels, bin_width=0.3)
    assert [b.count for b in bins] == [2, 1, 1, 3]
    assert [b.lower for b in bins] == [0.0, 0.3, 0.6, 0.9]
    assert [b.upper for b in bins] == [0.3, 0.6, 0.9, 1.0]

    tenths = reliability_diagram(np.array([0.3, 0.7, 0.2]), np.array([1, 1, 0]), bin_width=0.1)
    assert [(b.lower, b.count) for b in tenths] == [(0.2, 1), (0.3, 1), (0.7, 1)]


def _records(scores, labels, task='diagnosis'):
    logits = np.log(scores / (1 - scores))
    return [PredictionRecord(f'S{i}', tuple(map(float, row)), tuple(map(int, lab)), {'sex': 'F'}, 'test', task)
            for i, (row, lab) in enumerate(zip(logits, labels))]


def test_mauc_skips_undefined_classes(rng):
    labels = np.stack([(rng.random(40) < 0.5).astype(int), np.zeros(40, dtype=int)], axis=1)
    scores = np.clip(0.2 + 0.6 * labels + 0.05 * rng.random((40, 2)), 0.01, 0.99)
    result = mauc(_records(scores, labels), ['a', 'b'])
    assert result.per_class['a'] == 1.0
    assert np.isnan(result.per_class['b'])
    assert result.mean == 1.0


def test_cooccurrence_diagonal_and_ordering(rng):
    labels = (rng.random((80, 3)) < 0.4).astype(int)
    scores = np.clip(0.1 + 0.8 * labels + 0.05 * rng.random((80, 3)), 0.01, 0.99)
    result = cooccurrence_matrix(_records(scores, labels), ['a', 'b', 'c'], cluster=True)
    np.testing.assert_allclose(np.diag(result.auc), 1.0)
    assert sorted(result.order) == [0, 1, 2]
    ordered = result.ordered()
    assert ordered.class_names == [['a', 'b', 'c'][i] for i in result.order]
    assert ordered.auc[0, 0] == 1.0
    assert result.label_correlation.shape == (3, 3)


def test_records_round_trip(tmp_path):
    records = _records(np.array([[0.2, 0.7]]), np.array([[0, UNLABELED]]))
    path = write_records(tmp_path / 'metrics' / 'predictions.jsonl', records)
    assert read_records(path) == records
    scores, labels = records_to_arrays(records)
    assert labels[0, 1] == UNLABELED
    np.testing.assert_allclose(scores[0], [0.2, 0.7])
    with pytest.raises(ValueError):
        PredictionRecord('x', (float('inf'),), (1,))
    with pytest.raises(ValueError):
        PredictionRecord('x', (0.0, 1.0), (1,))


def test_npr_rewards_clustered_embeddings(rng):
    labels = np.zeros((60, 2), dtype=int)
    labels[:15, 0] = 1
    centers = np.where(labels[:, :1] == 1, 5.0, -5.0)
    emb = np.concatenate([centers, np.ones((60, 1))], axis=1) + rng.normal(size=(60, 2))
    result = npr(emb, labels, ['a', 'b'], k=5)
    assert set(result) == {'a'}
    assert result['a'].dataset_rate == 0.25
    assert result['a'].npr_pos == pytest.approx(4.0)
    assert result['a'].npr_all == pytest.approx(1.0)


def test_npr_of_random_embeddings_is_near_one(rng):
    emb = rng.normal(size=(2000, 16))
    labels = (rng.random((2000, 2)) < [0.2, 0.5]).astype(int)
    for result in npr(emb, labels, ['a', 'b'], k=10).values():
        assert 0.8 <= result.npr_all <= 1.2
        assert 0.8 <= result.npr_pos <= 1.2


def test_nearest_neighbors_exclude_self(rng):
    emb = rng.normal(size=(10, 3))
    idx = nearest_neighbors(emb, 3)
    assert idx.shape == (10, 3)
    assert all(i not in row for i, row in enumerate(idx))
    with pytest.raises(ValueError):
        nearest_neighbors(emb, 10)
    with pytest.raises(ValueError):
        normalized_positive_rate(0.3, 0.0)


def _grid(name, n_kept=3):
    kept = np.zeros(4, dtype=bool)
    kept[:n_kept] = True
    return TokenGrid(seq_name=name, kind='T1', plane='axial', source_orientation=(0, 1, 2), patch_dims=(4, 4, 2),
                     threshold=0.02, coords=np.array([(i, 0, 0) for i in range(4)]),
                     latents=np.ones((4, 4), dtype=np.float32), codes=np.zeros(4, dtype=int), kept=kept,
                     mean_intensity=kept.astype(float))


def _example(i, names):
    return TrainingExample(f'S{i}', 'MRI BRAIN', tuple(_grid(n) for n in names), SummarizedReport(('x',)), 'x.',
                           False)


def test_modality_drop_measures_the_lost_signal():
    positives = [_example(i, ['AX_T1', 'AX_T2_FLAIR', 'COR_T2']) for i in range(4)]
    negatives = [_example(i + 4, ['AX_T1', 'AX_T2_FLAIR']) for i in range(4)]
    labels = np.array([[1]] * 4 + [[0]] * 4)

    def score_fn(inputs):
        return np.array([[len(s.sequences)] for s in inputs], dtype=float)

    result = modality_drop_eval(score_fn, positives + negatives, labels, ['t2_signal'], 'T2|FLAIR')
    assert result.auc_full == {'t2_signal': 1.0}
    assert result.auc_dropped == {'t2_signal': 0.5}
    assert result.as_dict()['delta_auc'] == {'t2_signal': 0.5}


def test_drop_never_removes_the_last_sequence():
    only_t2 = _example(0, ['AX_T2_FLAIR', 'COR_T2'])
    assert len(drop_sequences(only_t2, 'T2').sequences) == 2
    assert [s.seq_name for s in drop_sequences(_example(1, ['AX_T1', 'COR_T2']), 't2').sequences] == ['AX_T1']


def test_scaling_harness_collects_medians():
    report = scaling_harness([1.0, 0.25, 0.5], [1, 2, 3], lambda f, s: {'top1': f + 0.01 * s})
    assert list(report.medians) == [0.25, 0.5, 1.0]
    assert report.medians[0.5] == pytest.approx(0.52)
    assert report.inversions == 0 and report.monotone
    assert report.as_dict()['values']['1.0'] == pytest.approx([1.01, 1.02, 1.03])
    with pytest.raises(ValueError):
        scaling_harness([0.0], [1], lambda f, s: {'top1': 0.0})


def test_scaling_inversions():
    noisy = ScalingReport('top1', {0.25: [0.3], 0.5: [0.2], 0.75: [0.4], 1.0: [0.35]})
    assert noisy.inversions == 2
    assert not noisy.monotone


def test_plots_are_written(tmp_path, rng):
    labels = (rng.random((30, 2)) < 0.5).astype(int)
    scores = np.clip(0.3 + 0.4 * labels + 0.2 * rng.random((30, 2)), 0.01, 0.99)
    records = _records(scores, labels)
    paths = [
        plot_roc_curves(scores, labels, ['a', 'b'], {'a': 0.9}, tmp_path / 'plots' / 'roc.png'),
        plot_reliability(reliability_diagram(scores[:, 0], labels[:, 0]), tmp_path / 'plots' / 'reliability.png'),
        plot_radar({'a': 0.9, 'b': 0.8, 'c': 0.7}, tmp_path / 'plots' / 'radar.png'),
        plot_cooccurrence(cooccurrence_matrix(records, ['a', 'b']), tmp_path / 'plots' / 'cooccurrence.png'),
    ]
    assert all(p.exists() and p.stat().st_size > 0 for p in paths)
