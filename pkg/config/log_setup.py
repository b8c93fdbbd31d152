"""Logging configuration shared by the CLI and the HTTP service."""
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

HUMAN_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record; extra ``fields`` are merged in."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            'ts': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
        }
        fields = getattr(record, 'fields', None)
        if isinstance(fields, dict):
            payload.update(fields)
        if record.exc_info:
            payload['exc'] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def configure_logging(log_dir: Optional[Path] = None, level: int = logging.INFO,
                      prefix: str = 'volclip') -> Optional[Path]:
    """Install a human stream handler and, when ``log_dir`` is given, a JSON-lines file handler.

    Returns the log file path (or None).
    """
    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        if getattr(handler, '_volclip', False):
            root.removeHandler(handler)

    stream = logging.StreamHandler()
    stream.setFormatter(logging.Formatter(HUMAN_FORMAT))
    stream._volclip = True
    root.addHandler(stream)

    if log_dir is None:
        return None
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / f"{prefix}_{datetime.now().strftime('%Y%m%d')}.jsonl"
    file_handler = logging.FileHandler(log_file)
    file_handler.setFormatter(JsonLineFormatter())
    file_handler._volclip = True
    root.addHandler(file_handler)
    return log_file
