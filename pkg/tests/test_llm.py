"""Gemini-backed clients against a stubbed model: parsing, retries and the transcript."""
import json

import numpy as np
import pytest

import llm.gemini
from config.experiment import LLMConfig
from llm.clients import GeminiContextClient, GeminiLabelClient, GeminiSummaryClient, LLMClientError, TranscriptLog
from llm.gemini import GeminiProvider


class _Reply:
    def __init__(self, text):
        self.text = text


class _ScriptedModel:
    """Returns the queued answers in order; an Exception entry is raised instead."""

    def __init__(self, *answers):
        self.answers = list(answers)
        self.prompts = []

    def generate_content(self, prompt, request_options=None):
        self.prompts.append(prompt)
        answer = self.answers.pop(0)
        if isinstance(answer, Exception):
            raise answer
        return _Reply(answer)


@pytest.fixture
def llm_cfg():
    return LLMConfig(provider='gemini', max_retries=1, backoff_seconds=0.0)


def _provider(*answers):
    provider = GeminiProvider(api_key='test-key', model='gemini-flash-latest')
    provider.client = _ScriptedModel(*answers)
    return provider


def test_missing_key_is_refused(monkeypatch):
    monkeypatch.delenv('GEMINI_API_KEY', raising=False)
    with pytest.raises(ValueError):
        GeminiProvider()


def test_prompt_fields_default_to_na():
    provider = _provider()
    assert provider.format_prompt({'a': 1}, '{a} / {b}') == '1 / N/A'
    assert provider.is_available()


def test_label_answers_are_parsed_and_logged(tmp_path, config, cohort, llm_cfg):
    provider = _provider('Yes.', RuntimeError('quota'), 'no')
    transcript = tmp_path / 'llm_transcript.jsonl'
    client = GeminiLabelClient(provider, llm_cfg, TranscriptLog(transcript))
    label = config.cohort.labels[0]
    report = cohort[0].report
    assert client.answer(report, label, 0) is True
    assert client.answer(report, label, 0) is False
    assert report.prose in provider.client.prompts[0]
    assert label.phrase in provider.client.prompts[0]

    rows = [json.loads(line) for line in transcript.read_text().splitlines()]
    assert [r['error'] for r in rows] == [None, 'quota', None]


def test_unparseable_label_answer_exhausts_retries(config, cohort, llm_cfg):
    client = GeminiLabelClient(_provider('maybe', 'perhaps'), llm_cfg, TranscriptLog(None))
    with pytest.raises(LLMClientError):
        client.answer(cohort[0].report, config.cohort.labels[0], 0)


def test_summary_lines_lose_their_bullets(cohort, llm_cfg):
    client = GeminiSummaryClient(_provider('1. Small left glioma\n- Moderate edema\n\n'), llm_cfg, TranscriptLog(None))
    assert client.summarize(cohort[0].report) == ['Small left glioma', 'Moderate edema']


def test_context_history_and_embedding(monkeypatch, cohort, llm_cfg):
    monkeypatch.setattr(llm.gemini.genai, 'embed_content',
                        lambda model, content, **kwargs: {'embedding': [1.0, 2.0, 3.0, 4.0, 5.0]})
    client = GeminiContextClient(_provider('  glioma; edema  '), llm_cfg, TranscriptLog(None))
    assert client.history(cohort[0].report) == 'glioma; edema'
    np.testing.assert_array_equal(client.embed('glioma', 4), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(LLMClientError):
        client.embed('glioma', 8)
