"""Config package."""
from .settings import settings
from .experiment import ExperimentConfig, ConfigurationError

__all__ = ['settings', 'ExperimentConfig', 'ConfigurationError']
