"""Experiment configuration: validation, hashing, ablations."""
import json

import pytest
from pydantic import ValidationError

from config.experiment import ABLATIONS, ConfigurationError, ExperimentConfig
from conftest import tiny_config


def test_unknown_keys_are_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({'cohort': {'n_studies': 10, 'colour': 'blue'}})


def test_prevalence_outside_unit_interval_names_the_field():
    cfg = ExperimentConfig().model_dump(mode='json')
    cfg['cohort']['labels'][0]['prevalence'] = 1.5
    with pytest.raises(ValidationError) as info:
        ExperimentConfig.model_validate(cfg)
    assert 'prevalence' in str(info.value)


def test_roster_needs_two_sequences():
    cfg = ExperimentConfig().model_dump(mode='json')
    cfg['cohort']['roster'] = cfg['cohort']['roster'][:1]
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(cfg)


def test_run_id_is_a_content_hash():
    a, b = tiny_config(), tiny_config()
    assert a.run_id == b.run_id
    assert len(a.run_id) == 12
    assert a.with_seed(2).run_id != a.run_id


def test_canonical_json_round_trips(tmp_path):
    cfg = tiny_config()
    path = tmp_path / 'config.json'
    path.write_text(cfg.canonical_json())
    loaded = ExperimentConfig.load(path)
    assert loaded.config_hash() == cfg.config_hash()
    assert json.loads(cfg.canonical_json())['seed'] == 1


def test_section_hash_ignores_unrelated_sections():
    cfg = tiny_config()
    changed = tiny_config(heads={'epochs': 7})
    assert cfg.section_hash('cohort', 'tokenizer') == changed.section_hash('cohort', 'tokenizer')
    assert cfg.section_hash('heads') != changed.section_hash('heads')
    assert cfg.section_hash('cohort') != cfg.with_seed(5).section_hash('cohort')


@pytest.mark.parametrize('name, check', [
    ('no-sequence-name', lambda c: c.encoder.use_sequence_names is False),
    ('no-study-description', lambda c: c.encoder.use_study_name is False),
    ('flat-transformer', lambda c: c.encoder.architecture == 'flat'),
    ('token-readout', lambda c: c.encoder.readout == 'tokens'),
    ('long-report', lambda c: c.objective.use_summaries is False),
    ('no-patdis', lambda c: c.objective.patdis_weight == 0.0),
])
def test_each_ablation_is_one_toggle(name, check):
    base = tiny_config()
    ablated = base.with_ablation(name)
    assert check(ablated)
    assert ablated.ablation.name == name
    assert base.ablation.name is None
    assert ablated.run_id != base.run_id


def test_unknown_ablation():
    assert 'no-patdis' in ABLATIONS
    with pytest.raises(ConfigurationError):
        tiny_config().with_ablation('no-tokenizer')
