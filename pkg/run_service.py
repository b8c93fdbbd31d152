"""Simple service runner without UI."""
import logging
import os

import uvicorn
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from config.log_setup import configure_logging  # noqa: E402
from config.settings import settings  # noqa: E402

log_file = configure_logging(settings.LOG_DIR, prefix='volclip_service')
logger = logging.getLogger(__name__)

settings.RUNS_DIR.mkdir(parents=True, exist_ok=True)
logger.info(f"Runs directory: {settings.RUNS_DIR.absolute()}")
logger.info(f"Log file: {log_file}")

# Import and run the app
from api_service import app  # noqa: E402

if __name__ == "__main__":
    port = int(os.getenv("PORT", settings.PORT))
    logger.info(f"Starting volumetric pretraining service on port {port}")
    logger.info(f"API Key: {os.getenv('API_KEY', 'NOT SET')[:4]}...")
    logger.info(f"LLM provider: {settings.LLM_PROVIDER}")

    uvicorn.run(
        app,
        host="0.0.0.0",
        port=port,
        log_level="info"
    )
