"""Default-scale runs on the 500-study cohort. Deselected unless run with ``-m acceptance``."""
import json

import numpy as np
import pytest

from config.experiment import ExperimentConfig
from connectors.artifact_store import RunStore
from pipeline.stages import BUNDLE, StageContext, run_stage
from voltok.patching import PatchSpec
from voltok.training import collect_patches, train_tokenizer

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope='module')
def default_config() -> ExperimentConfig:
    return ExperimentConfig.model_validate({'eval': {'write_plots': False}, 'explain': {'export_overlays': False}})


@pytest.fixture(scope='module')
def default_run(tmp_path_factory, default_config):
    runs_dir = tmp_path_factory.mktemp('runs')
    result = run_stage('all', default_config, runs_dir=runs_dir)
    return runs_dir, RunStore(runs_dir, default_config.run_id), result


def test_default_cohort_composition(default_run, default_config):
    _, _, result = default_run
    generated = result.summary['generate']
    assert generated['n_studies'] == 500
    assert 0.36 <= 1 - generated['n_abnormal'] / generated['n_studies'] <= 0.44


def test_pretraining_reaches_the_retrieval_target(default_run, default_config):
    _, store, _ = default_run
    records = [json.loads(line) for line in store.path('metrics/clip_log.jsonl').read_text().splitlines()]
    assert records
    assert all(r['top5'] >= r['top1'] for r in records)
    assert max(r['top1'] for r in records) >= default_config.objective.retrieval_target


def test_lesion_attributions_hit_their_masks(default_run):
    _, store, _ = default_run
    summary = json.loads(store.path('metrics/explain.json').read_text())
    assert summary['hit_rate'] >= 0.9


def test_dropping_t2_hurts_t2_classes_more(default_run):
    _, store, _ = default_run
    drop = json.loads(store.path(BUNDLE).read_text())['modality_drop']
    assert drop['mean_delta']['T2'] > drop['mean_delta']['T1']


def test_patient_discrimination_reaches_the_target_sooner(default_run, default_config):
    runs_dir, _, _ = default_run
    summary = run_stage('ablate', default_config, runs_dir=runs_dir, ablation='no-patdis').summary
    assert summary['baseline_sooner_majority']


def test_retrieval_grows_with_the_training_set(default_run, default_config):
    runs_dir, _, _ = default_run
    summary = run_stage('scale-sweep', default_config, runs_dir=runs_dir).summary
    assert summary['inversions'] <= 1


@pytest.fixture(scope='module')
def default_patches(default_run, default_config):
    runs_dir, _, _ = default_run
    cfg = default_config.tokenizer
    studies = StageContext(default_config, runs_dir).dataset().read_cohort()
    spec = PatchSpec(tuple(cfg.patch_dims), cfg.latent_dim)
    return collect_patches(studies, spec, cfg.threshold, cfg.max_train_patches,
                           np.random.default_rng(default_config.seed))


def test_larger_codebook_overfits_less(default_patches, default_config):
    cfg = default_config.tokenizer
    large = train_tokenizer(default_patches, cfg.model_copy(update={'codebook_size': 64}), seed=0)
    small = train_tokenizer(default_patches, cfg.model_copy(update={'codebook_size': 8}), seed=0)
    assert large.history.final_val_l1 <= small.history.final_val_l1
    assert large.history.final_val_l1 <= 0.5 * large.history.initial_val_l1


def test_permutation_training_generalizes_across_orientations(default_patches, default_config):
    cfg = default_config.tokenizer
    permuted = train_tokenizer(default_patches, cfg, seed=0, permute=True)
    plain = train_tokenizer(default_patches, cfg, seed=0, permute=False)
    assert permuted.history.permutation_ratio <= 1.5
    assert plain.history.permutation_ratio > permuted.history.permutation_ratio
