"""Client seams for report labeling, summarization and clinical context.

Every seam has a deterministic mock that answers from the structured findings
of a synthetic report, and an external implementation backed by
``GeminiProvider``. External calls are retried with exponential backoff and
every exchange is appended to a JSONL transcript for audit.
"""
import hashlib
import json
import logging
import re
import threading
import time
from datetime import datetime
from pathlib import Path
from typing import Callable, List, Optional, Protocol, TypeVar

import numpy as np

from config.experiment import LabelSpec, LLMConfig
from synthcohort.schema import RawReport

logger = logging.getLogger(__name__)

PROMPT_DIR = Path(__file__).parent.parent / 'prompts'
T = TypeVar('T')


class LLMClientError(RuntimeError):
    """An external client failed, timed out or refused after all retries."""


class LabelClient(Protocol):
    def answer(self, report: RawReport, label: LabelSpec, label_id: int) -> bool:
        """Return True for 'yes'. Raise LLMClientError when no answer is available."""


class SummaryClient(Protocol):
    def summarize(self, report: RawReport) -> List[str]:
        ...


class ContextClient(Protocol):
    def history(self, report: RawReport) -> str:
        ...

    def embed(self, text: str, dim: int) -> np.ndarray:
        ...


def load_prompt(name: str) -> str:
    with open(PROMPT_DIR / name, 'r', encoding='utf-8') as f:
        return f.read()


class TranscriptLog:
    """Append-only JSONL record of external exchanges (thread-safe)."""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def record(self, kind: str, prompt: str, response: Optional[str], error: Optional[str] = None):
        if self.path is None:
            return
        line = json.dumps({'ts': datetime.now().isoformat(), 'kind': kind, 'prompt': prompt,
                           'response': response, 'error': error})
        with self._lock:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(line + '\n')


def with_retries(call: Callable[[], T], max_retries: int, backoff_seconds: float, what: str) -> T:
    """Run ``call`` with exponential backoff; raise LLMClientError when exhausted."""
    last_error = None
    for attempt in range(max_retries + 1):
        try:
            return call()
        except Exception as e:  # transport, timeout and refusal errors all look alike here
            last_error = e
            logger.warning(f'{what} failed (attempt {attempt + 1}/{max_retries + 1}): {e}')
            if attempt < max_retries:
                time.sleep(backoff_seconds * (2 ** attempt))
    raise LLMClientError(f'{what} failed after {max_retries + 1} attempts: {last_error}')


# ---------------------------------------------------------------------------
# Mocks
# ---------------------------------------------------------------------------

class MockLabelClient:
    """Answers from the structured findings; exact on synthetic reports."""

    def __init__(self):
        self.calls = 0

    def answer(self, report: RawReport, label: LabelSpec, label_id: int) -> bool:
        self.calls += 1
        return any(f.label_id == label_id for f in report.findings)


class MockContextClient:
    """Clinical history = the structured findings; embedding = seeded hash vector."""

    def history(self, report: RawReport) -> str:
        if report.is_normal:
            return 'no significant abnormality'
        return '; '.join(f.text.lower() for f in report.findings)

    def embed(self, text: str, dim: int) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(text.encode('utf-8')).digest()[:8], 'little')
        vec = np.random.default_rng(seed).standard_normal(dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


# ---------------------------------------------------------------------------
# External (Gemini)
# ---------------------------------------------------------------------------

_YES_NO = re.compile(r'\b(yes|no)\b', re.IGNORECASE)


class GeminiLabelClient:
    def __init__(self, provider, cfg: LLMConfig, transcript: TranscriptLog):
        self.provider = provider
        self.cfg = cfg
        self.transcript = transcript
        self.template = load_prompt('report_labeling.txt')

    def answer(self, report: RawReport, label: LabelSpec, label_id: int) -> bool:
        prompt = self.provider.format_prompt({'report': report.prose, 'label': label.name.replace('_', ' '),
                                              'phrase': label.phrase}, self.template)

        def ask() -> bool:
            try:
                text = self.provider.generate(prompt)
            except Exception as e:
                self.transcript.record('label', prompt, None, str(e))
                raise
            self.transcript.record('label', prompt, text)
            match = _YES_NO.search(text or '')
            if not match:
                raise LLMClientError(f'unparseable labeling answer: {text!r}')
            return match.group(1).lower() == 'yes'

        return with_retries(ask, self.cfg.max_retries, self.cfg.backoff_seconds, f'label {label.name}')


class GeminiSummaryClient:
    def __init__(self, provider, cfg: LLMConfig, transcript: TranscriptLog):
        self.provider = provider
        self.cfg = cfg
        self.transcript = transcript
        self.template = load_prompt('report_summary.txt')

    def summarize(self, report: RawReport) -> List[str]:
        prompt = self.provider.format_prompt({'report': report.prose}, self.template)

        def ask() -> List[str]:
            text = self.provider.generate(prompt)
            self.transcript.record('summary', prompt, text)
            items = [line.lstrip('-*0123456789. ').strip() for line in text.splitlines()]
            return [item for item in items if item]

        return with_retries(ask, self.cfg.max_retries, self.cfg.backoff_seconds, 'summary')


class GeminiContextClient:
    def __init__(self, provider, cfg: LLMConfig, transcript: TranscriptLog):
        self.provider = provider
        self.cfg = cfg
        self.transcript = transcript
        self.template = load_prompt('clinical_history.txt')

    def history(self, report: RawReport) -> str:
        prompt = self.provider.format_prompt({'report': report.prose}, self.template)

        def ask() -> str:
            text = self.provider.generate(prompt).strip()
            self.transcript.record('history', prompt, text)
            return text

        return with_retries(ask, self.cfg.max_retries, self.cfg.backoff_seconds, 'clinical history')

    def embed(self, text: str, dim: int) -> np.ndarray:
        vec = with_retries(lambda: self.provider.embed(text, dim), self.cfg.max_retries,
                           self.cfg.backoff_seconds, 'context embedding')
        vec = np.asarray(vec, dtype=np.float32)[:dim]
        if vec.shape[0] != dim:
            raise LLMClientError(f'embedding has {vec.shape[0]} dims, expected {dim}')
        return vec


def _provider(cfg: LLMConfig):
    from config.settings import settings
    from .gemini import GeminiProvider

    creds = settings.get_llm_credentials()
    return GeminiProvider(api_key=creds['api_key'], model=cfg.model or creds['model'],
                          embedding_model=creds['embedding_model'], timeout=cfg.timeout_seconds)


def build_label_client(cfg: LLMConfig, transcript_path: Optional[Path] = None) -> LabelClient:
    if cfg.provider == 'mock':
        return MockLabelClient()
    return GeminiLabelClient(_provider(cfg), cfg, TranscriptLog(transcript_path))


def build_summary_client(cfg: LLMConfig, transcript_path: Optional[Path] = None) -> Optional[SummaryClient]:
    """None means the deterministic rule summarizer."""
    if cfg.provider == 'mock':
        return None
    return GeminiSummaryClient(_provider(cfg), cfg, TranscriptLog(transcript_path))


def build_context_client(provider_name: str, cfg: LLMConfig, transcript_path: Optional[Path] = None) -> ContextClient:
    if provider_name == 'hash':
        return MockContextClient()
    return GeminiContextClient(_provider(cfg), cfg, TranscriptLog(transcript_path))
