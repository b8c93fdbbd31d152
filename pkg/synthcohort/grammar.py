"""Report prose templates.

Finding sentences have the shape ``<Severity> <laterality> <phrase>[, <qualifier>].``;
everything else in a report is boilerplate.
"""
import re
from typing import List, Sequence

import numpy as np

from .schema import SEVERITY_WORDS, Finding

BOILERPLATE = (
    'Technique: multiplanar multisequence MRI of the brain was performed.',
    'Comparison: previous MRI is not available.',
    'The orbits are unremarkable.',
    'The paranasal sinuses and mastoid air cells are clear.',
    'No subdural collection is seen along the convexities.',
    'Intracranial flow voids are preserved.',
    'The craniocervical junction is within normal limits.',
    'Clinical indication: headache, evaluate for mass.',
    'Images were reviewed on a diagnostic workstation.',
    'Findings were discussed with the referring team.',
)

NORMAL_SENTENCE = 'No acute intracranial abnormality.'

QUALIFIERS = (
    'stable compared to the previous examination',
    'with interval progression',
    'improved since prior imaging',
)

COMPARISON_TERMS = ('stable', 'progression', 'previous', 'improved', 'prior', 'interval')

FINDING_PATTERN = re.compile(
    r'^(?P<severity>' + '|'.join(SEVERITY_WORDS.values()) + r') '
    r'(?P<laterality>left|right|midline) '
    r'(?P<phrase>[a-z][a-z\- ]*?)'
    r'(?:, (?P<qualifier>[^.]*))?\.?$'
)

_SENTENCE_SPLIT = re.compile(r'(?<=[.:])\s+')


def split_sentences(prose: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(prose.strip()) if s.strip()]


def render_prose(study_name: str, findings: Sequence[Finding], rng: np.random.Generator) -> str:
    """Interleave finding sentences with distractor boilerplate; findings keep their order."""
    picks = rng.choice(len(BOILERPLATE), size=4, replace=False)
    head = [BOILERPLATE[i] for i in picks[:2]]
    tail = [BOILERPLATE[i] for i in picks[2:]]
    body = [f.sentence for f in findings] if findings else [NORMAL_SENTENCE]
    return ' '.join([f'EXAM: {study_name}.'] + head + ['Findings:'] + body + tail)
