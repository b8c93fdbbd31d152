"""HTTP surface over the run store."""
import pytest
from fastapi.testclient import TestClient

import api_service
from connectors.artifact_store import RunStore
from conftest import tiny_config

API_KEY = 'test-key'


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr(api_service, 'RUNS_DIR', tmp_path)
    monkeypatch.setattr(api_service, 'API_KEY', API_KEY)
    return TestClient(api_service.app)


@pytest.fixture
def run_id(tmp_path):
    cfg = tiny_config(cohort={'n_studies': 12, 'grid': [16, 16, 4]})
    RunStore(tmp_path, cfg.run_id).archive_config(cfg.canonical_json())
    return cfg.run_id


def _trigger(client, run_id, stage, key=API_KEY, **params):
    return client.post(f'/api/v1/runs/{run_id}/stages/{stage}', headers={'x-api-key': key}, params=params)


def test_root_and_health(client):
    assert client.get('/').json()['endpoints']['health'] == '/api/v1/health'
    body = client.get('/api/v1/health').json()
    assert body['status'] == 'healthy'


def test_runs_listing(client, run_id):
    body = client.get('/api/v1/runs').json()
    assert body['count'] == 1
    assert body['runs'][0] == {'run_id': run_id, 'stages': [], 'last_completed': None}


def test_unknown_runs_are_not_found(client, run_id):
    assert client.get('/api/v1/runs/not-a-run/metrics').status_code == 404
    assert client.get('/api/v1/runs/0123456789ab/metrics').status_code == 404
    assert _trigger(client, run_id, 'dance').status_code == 404


def test_stage_trigger_needs_the_key(client, run_id):
    assert _trigger(client, run_id, 'generate', key='wrong').status_code == 401


def test_missing_upstream_artifact_is_a_conflict(client, run_id):
    response = _trigger(client, run_id, 'tokenize')
    assert response.status_code == 409
    assert response.json()['detail']['producing_stage'] == 'generate'


def test_busy_run_is_a_conflict(client, run_id):
    lock = api_service._lock_for(run_id)
    lock.acquire()
    try:
        assert _trigger(client, run_id, 'generate').status_code == 409
    finally:
        lock.release()


def test_generate_then_resume(client, run_id):
    first = _trigger(client, run_id, 'generate')
    assert first.status_code == 200
    assert first.json()['status'] == 'completed'
    assert first.json()['summary']['n_studies'] == 12

    again = _trigger(client, run_id, 'generate')
    assert again.json()['status'] == 'skipped'
    forced = _trigger(client, run_id, 'generate', resume='false')
    assert forced.json()['status'] == 'completed'

    metrics = client.get(f'/api/v1/runs/{run_id}/metrics').json()['metrics']
    assert metrics['generate']['n_studies'] == 12
    assert client.get('/api/v1/runs').json()['runs'][0]['stages'] == ['generate']
