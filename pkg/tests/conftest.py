"""Shared fixtures: a tiny fixed-seed experiment that trains in seconds on CPU."""
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from config.experiment import ExperimentConfig  # noqa: E402
from synthcohort.generator import generate_cohort  # noqa: E402


def tiny_config(**overrides) -> ExperimentConfig:
    doc = {
        'seed': 1,
        'cohort': {'n_studies': 24, 'grid': [16, 16, 4]},
        'tokenizer': {'patch_dims': [4, 4, 2], 'codebook_size': 16, 'latent_dim': 4, 'hidden_channels': 8,
                      'epochs': 2, 'batch_size': 64, 'max_train_patches': 1500, 'dead_code_epochs': 1},
        'text': {'lm_dim': 16, 'lm_layers': 1, 'lm_heads': 2, 'lm_epochs': 1, 'lm_batch_size': 8,
                 'max_report_tokens': 32, 'name_dim': 8, 'name_layers': 1, 'name_heads': 2, 'name_epochs': 2,
                 'name_batch_size': 8},
        'encoder': {'sequence': {'layers': 1, 'heads': 2, 'head_dim': 8, 'n_registers': 2, 'output_dim': 16,
                                 'mlp_ratio': 2},
                    'study': {'layers': 1, 'heads': 2, 'head_dim': 8, 'n_registers': 2, 'output_dim': 16,
                              'mlp_ratio': 2},
                    'pos_dim_per_axis': 4},
        'objective': {'projection_dim': 16, 'patdis_hidden': 16, 'steps': 6, 'batch_size': 8, 'eval_every': 3,
                      'learning_rate': 1e-3, 'val_fraction': 0.25, 'test_fraction': 0.25},
        'heads': {'epochs': 3, 'batch_size': 8, 'context_dim': 4},
        'eval': {'group_size': 4, 'npr_k': 3, 'scaling_fractions': [0.5, 1.0], 'scaling_seeds': [1, 2, 3],
                 'write_plots': False},
        'explain': {'n_samples': 64, 'max_studies': 2, 'export_overlays': False},
        'fairness': {'bootstrap_size': 10, 'bootstrap_iters': 5},
    }
    for section, values in overrides.items():
        if isinstance(values, dict):
            doc.setdefault(section, {}).update(values)
        else:
            doc[section] = values
    return ExperimentConfig.model_validate(doc)


@pytest.fixture(scope='session')
def config() -> ExperimentConfig:
    return tiny_config()


@pytest.fixture(scope='session')
def cohort(config):
    return generate_cohort(config.cohort, config.seed)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
