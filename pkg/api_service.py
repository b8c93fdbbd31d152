"""FastAPI service over the run store: health, runs, metrics and stage triggers."""
import json
import logging
import os
import re
import threading
from datetime import datetime
from pathlib import Path
from typing import Dict

from fastapi import FastAPI, HTTPException, Header
from fastapi.responses import JSONResponse
from fastapi.middleware.cors import CORSMiddleware
import uvicorn

from config.experiment import ConfigurationError, ExperimentConfig
from config.log_setup import configure_logging
from config.settings import settings
from connectors.artifact_store import ChecksumMismatchError, MissingArtifactError, RunStore
from pipeline.stages import STAGE_NAMES, run_stage

configure_logging(settings.LOG_DIR, prefix='volclip_api')
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(
    title="Volumetric Vision-Language Pretraining Service",
    description="Run store browser and stage trigger for the volumetric study / report pipeline",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

RUNS_DIR = settings.RUNS_DIR
logger.info(f"Runs directory: {RUNS_DIR}")

API_KEY = os.getenv("API_KEY", settings.API_KEY)

RUN_ID_PATTERN = re.compile(r'^[0-9a-f]{12}$')

# one stage at a time per run directory
_run_locks: Dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


def verify_api_key(x_api_key: str = Header(None)):
    """Verify API key from header."""
    if x_api_key != API_KEY:
        raise HTTPException(status_code=401, detail="Invalid API Key")
    return True


def _run_dir(run_id: str) -> Path:
    if not RUN_ID_PATTERN.match(run_id):
        raise HTTPException(status_code=404, detail=f"Unknown run: {run_id}")
    path = Path(RUNS_DIR) / run_id
    if not (path / 'config.json').exists():
        raise HTTPException(status_code=404, detail=f"Unknown run: {run_id}")
    return path


def _lock_for(run_id: str) -> threading.Lock:
    with _locks_guard:
        return _run_locks.setdefault(run_id, threading.Lock())


@app.get("/")
async def root():
    """Root endpoint."""
    return {
        "message": "Volumetric Vision-Language Pretraining API",
        "version": "1.0.0",
        "docs": "/docs",
        "endpoints": {
            "health": "/api/v1/health",
            "runs": "/api/v1/runs",
            "metrics": "/api/v1/runs/{run_id}/metrics",
            "run_stage": "/api/v1/runs/{run_id}/stages/{stage} (POST)"
        }
    }


@app.get("/api/v1/health")
async def health_check():
    """Health check endpoint."""
    try:
        runs_dir = Path(RUNS_DIR)
        return {
            "status": "healthy",
            "timestamp": datetime.now().isoformat(),
            "runs_dir": str(runs_dir),
            "run_store": "present" if runs_dir.exists() else "empty",
            "gemini_api": "configured" if settings.GEMINI_API_KEY else "not_configured"
        }
    except Exception as e:
        return JSONResponse(
            status_code=503,
            content={
                "status": "unhealthy",
                "error": str(e),
                "timestamp": datetime.now().isoformat()
            }
        )


@app.get("/api/v1/runs")
async def list_runs():
    """List runs with the stages completed in each."""
    runs = RunStore.list_runs(Path(RUNS_DIR))
    return {"status": "success", "count": len(runs), "runs": runs}


@app.get("/api/v1/runs/{run_id}/metrics")
async def get_metrics(run_id: str):
    """Every metrics JSON document a run has written, keyed by file stem."""
    run_dir = _run_dir(run_id)
    metrics = {}
    for path in sorted((run_dir / 'metrics').glob('*.json')):
        try:
            metrics[path.stem] = json.loads(path.read_text(encoding='utf-8'))
        except ValueError as e:
            logger.error(f"Unreadable metrics file {path}: {e}")
    return {"status": "success", "run_id": run_id, "metrics": metrics}


@app.post("/api/v1/runs/{run_id}/stages/{stage}")
def trigger_stage(run_id: str, stage: str, resume: bool = True, ablation: str = None,
                  x_api_key: str = Header(None)):
    """Run one stage against an existing run's archived config."""
    verify_api_key(x_api_key)
    run_dir = _run_dir(run_id)
    if stage not in STAGE_NAMES:
        raise HTTPException(status_code=404, detail=f"Unknown stage: {stage}")

    lock = _lock_for(run_id)
    if not lock.acquire(blocking=False):
        raise HTTPException(status_code=409, detail=f"A stage is already running for {run_id}")

    logger.info(f"=== Stage {stage} requested for run {run_id} ===")
    try:
        cfg = ExperimentConfig.model_validate_json((run_dir / 'config.json').read_text(encoding='utf-8'))
        result = run_stage(stage, cfg, runs_dir=Path(RUNS_DIR), resume=resume, ablation=ablation)
        return {
            "status": "skipped" if result.skipped else "completed",
            "run_id": run_id,
            "stage": result.stage,
            "outputs": result.outputs,
            "summary": json.loads(json.dumps(result.summary, default=float)),
            "completed_at": datetime.now().isoformat()
        }
    except MissingArtifactError as e:
        logger.warning(f"Stage {stage} for {run_id}: {e}")
        raise HTTPException(status_code=409, detail={"message": str(e), "producing_stage": e.stage})
    except (ConfigurationError, ChecksumMismatchError) as e:
        raise HTTPException(status_code=409, detail=str(e))
    except Exception as e:
        logger.error(f"Error in stage {stage} for {run_id}: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=str(e))
    finally:
        lock.release()


if __name__ == "__main__":
    uvicorn.run(
        app,
        host="0.0.0.0",
        port=settings.PORT,
        log_level="info"
    )
