"""Environment settings: credentials and service options."""
import os
from pathlib import Path
from dotenv import load_dotenv
from typing import Dict, Any

# Load environment variables
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(env_path)


class Settings:
    """Application settings.

    Only credentials and service plumbing live here. Everything that shapes
    an experiment belongs in ``ExperimentConfig`` so that it is hashed into
    the run id.
    """

    # LLM Configuration
    LLM_PROVIDER = os.getenv('LLM_PROVIDER', 'mock')
    GEMINI_API_KEY = os.getenv('GEMINI_API_KEY', '')
    GEMINI_MODEL = os.getenv('GEMINI_MODEL', 'gemini-flash-latest')
    GEMINI_EMBEDDING_MODEL = os.getenv('GEMINI_EMBEDDING_MODEL', 'models/text-embedding-004')

    # Run store
    RUNS_DIR = Path(os.getenv('RUNS_DIR', 'runs'))
    LOG_DIR = Path(os.getenv('LOG_DIR', 'logs'))

    # API Configuration
    API_KEY = os.getenv('API_KEY', 'change-this-api-key')
    PORT = int(os.getenv('PORT', 8000))

    @classmethod
    def get_llm_credentials(cls) -> Dict[str, Any]:
        """Get external LLM credentials."""
        return {
            'api_key': cls.GEMINI_API_KEY,
            'model': cls.GEMINI_MODEL,
            'embedding_model': cls.GEMINI_EMBEDDING_MODEL,
        }

    @classmethod
    def get_service_config(cls) -> Dict[str, Any]:
        """Get HTTP service configuration."""
        return {
            'runs_dir': cls.RUNS_DIR,
            'log_dir': cls.LOG_DIR,
            'port': cls.PORT,
        }


# Create singleton instance
settings = Settings()
