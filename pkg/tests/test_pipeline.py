"""End-to-end stage runs on the tiny experiment."""
import json
import math

import pytest

from config.experiment import ConfigurationError
from connectors.artifact_store import MissingArtifactError, RunStore
from main import build_parser, run
from pipeline.stages import BUNDLE, PIPELINE, PREDICTIONS, StageContext, baseline_reaches_target_sooner, run_stage

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def finished_run(tmp_path_factory, config):
    runs_dir = tmp_path_factory.mktemp('runs')
    result = run_stage('all', config, runs_dir=runs_dir)
    return runs_dir, result


def test_all_stages_complete(finished_run, config):
    runs_dir, result = finished_run
    assert set(result.summary) == set(PIPELINE)
    store = RunStore(runs_dir, config.run_id)
    assert [e['stage'] for e in store.ledger.entries] == list(PIPELINE)
    for rel in (PREDICTIONS, BUNDLE, 'metrics/fairness.json', 'metrics/explain.json', 'metrics/summary.html'):
        assert store.path(rel).exists(), rel

    assert result.summary['generate']['n_studies'] == config.cohort.n_studies
    assert result.summary['probe']['encoder_unchanged']
    bundle = json.loads(store.path(BUNDLE).read_text())
    assert {'retrieval', 'diagnosis', 'diagnosis_context', 'reliability', 'npr', 'acuity', 'age', 'referral',
            'modality_drop'} <= set(bundle)
    assert bundle['encoder_checksum'] == result.summary['probe']['encoder_checksum']
    assert result.summary['evaluate']['embedding_cache_hit'] is True

    stored = json.loads(store.path('config.json').read_text())
    assert stored['seed'] == config.seed


def test_resume_skips_unchanged_stages(finished_run, config):
    runs_dir, _ = finished_run
    result = run_stage('fairness', config, runs_dir=runs_dir, resume=True)
    assert result.skipped
    assert 'metrics/fairness.json' in result.outputs


def test_embeddings_come_from_the_cache(finished_run, config):
    runs_dir, _ = finished_run
    ctx = StageContext(config, runs_dir)
    run_stage('evaluate', config, ctx=ctx)
    assert ctx.embedding_cache_hit is True


def test_missing_upstream_names_the_producer(tmp_path, config):
    with pytest.raises(MissingArtifactError) as info:
        run_stage('train-clip', config, runs_dir=tmp_path)
    assert info.value.stage == 'tokenize'
    with pytest.raises(ConfigurationError):
        run_stage('dance', config, runs_dir=tmp_path)


def test_ablation_compares_against_baseline(finished_run, config):
    runs_dir, _ = finished_run
    with pytest.raises(ConfigurationError):
        run_stage('ablate', config, runs_dir=runs_dir)
    result = run_stage('ablate', config, runs_dir=runs_dir, ablation='no-patdis')
    summary = result.summary
    assert summary['ablation'] == 'no-patdis'
    assert [run['seed'] for run in summary['per_seed']] == config.eval.ablation_seeds
    for run in summary['per_seed']:
        assert {'steps_to_target', 'final', 'best_top1', 'val_mauc'} <= set(run['ablated'])
        assert run['baseline_sooner'] == baseline_reaches_target_sooner(run['baseline'], run['ablated'])
    assert summary['baseline_wins'] == sum(run['baseline_sooner'] is True for run in summary['per_seed'])
    assert summary['baseline_sooner_majority'] == (summary['baseline_wins'] >= 2)
    assert 'metrics/ablation_no-patdis.json' in result.outputs
    store = RunStore(runs_dir, config.run_id)
    assert store.path('metrics/ablation_baseline_seed3_log.jsonl').exists()


@pytest.mark.parametrize('baseline, ablated, sooner', [
    (100, 200, True),
    (200, 100, False),
    (100, 100, False),
    (100, None, True),
    (None, 100, False),
    (None, None, None),
])
def test_sooner_target_verdict(baseline, ablated, sooner):
    assert baseline_reaches_target_sooner({'steps_to_target': baseline}, {'steps_to_target': ablated}) is sooner


def test_cli_reports_up_to_date_stage(finished_run, config, tmp_path, capsys):
    runs_dir, _ = finished_run
    config_path = tmp_path / 'experiment.json'
    config_path.write_text(config.model_dump_json(), encoding='utf-8')
    args = build_parser().parse_args(['--config', str(config_path), '--run-dir', str(runs_dir),
                                      '--stage', 'fairness', '--resume'])
    assert run(args)
    assert 'up to date' in capsys.readouterr().out


def test_cli_rejects_bad_input(tmp_path, capsys):
    bad = tmp_path / 'bad.json'
    bad.write_text('{"cohort": {"n_studies": 0}}', encoding='utf-8')
    assert not run(build_parser().parse_args(['--config', str(bad), '--run-dir', str(tmp_path)]))
    assert 'Invalid configuration' in capsys.readouterr().out

    assert not run(build_parser().parse_args(['--run-dir', str(tmp_path), '--stage', 'evaluate']))
    assert '--stage train-clip' in capsys.readouterr().out


def _assert_same_metrics(a, b, path='bundle'):
    if isinstance(a, dict):
        assert set(a) == set(b), path
        for key in a:
            _assert_same_metrics(a[key], b[key], f'{path}.{key}')
    elif isinstance(a, list):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _assert_same_metrics(x, y, f'{path}[{i}]')
    elif isinstance(a, float) or isinstance(b, float):
        assert (math.isnan(a) and math.isnan(b)) or abs(a - b) <= 1e-6, path
    else:
        assert a == b, path


def test_rerun_reproduces_the_bundle(finished_run, config, tmp_path):
    runs_dir, _ = finished_run
    run_stage('all', config, runs_dir=tmp_path)
    first = json.loads(RunStore(runs_dir, config.run_id).path(BUNDLE).read_text())
    second = json.loads(RunStore(tmp_path, config.run_id).path(BUNDLE).read_text())
    _assert_same_metrics(first, second)


def test_scale_sweep_reports_every_fraction(finished_run, config):
    runs_dir, _ = finished_run
    summary = run_stage('scale-sweep', config, runs_dir=runs_dir).summary
    assert [float(f) for f in summary['medians']] == sorted(config.eval.scaling_fractions)
    assert summary['monotone'] == (summary['inversions'] == 0)
    payload = json.loads(RunStore(runs_dir, config.run_id).path('metrics/scaling.json').read_text())
    assert all(len(v) == len(config.eval.scaling_seeds) for v in payload['values'].values())
