"""Report labeling: keyword prefilter, then a yes/no client per class."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Sequence

from config.experiment import ConfigurationError, LabelSpec
from llm.clients import LabelClient
from synthcohort.schema import UNLABELED, LabelVector, RawReport, VolumetricStudy

logger = logging.getLogger(__name__)


def keyword_prefilter(prose: str, spec: LabelSpec) -> bool:
    """True when every keyword pattern of the class occurs in the report."""
    text = prose.lower()
    return all(keyword in text for keyword in spec.keywords)


def label_report(report: RawReport, keyword_rules: Sequence[LabelSpec], client: LabelClient,
                 source_id: str = '') -> LabelVector:
    """Label one report.

    A class whose keywords are absent is 0 without consulting the client.
    A client failure marks the class UNLABELED rather than 0.
    """
    if not keyword_rules:
        raise ConfigurationError('keyword_rules must cover every label class')
    y = []
    for label_id, spec in enumerate(keyword_rules):
        if not keyword_prefilter(report.prose, spec):
            y.append(0)
            continue
        try:
            y.append(1 if client.answer(report, spec, label_id) else 0)
        except Exception as e:
            logger.error(f'labeling {spec.name} failed for {source_id or "report"}: {e}', exc_info=True)
            y.append(UNLABELED)
    return LabelVector(tuple(y))


def label_cohort(studies: Sequence[VolumetricStudy], keyword_rules: Sequence[LabelSpec], client: LabelClient,
                 max_concurrency: int = 4) -> Dict[str, LabelVector]:
    """Label every study's report with at most ``max_concurrency`` reports in flight."""
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        vectors = list(pool.map(lambda s: label_report(s.report, keyword_rules, client, s.study_id), studies))
    result = {study.study_id: vec for study, vec in zip(studies, vectors)}
    n_unlabeled = sum(not vec.is_complete for vec in vectors)
    if n_unlabeled:
        logger.warning(f'{n_unlabeled} of {len(studies)} reports carry unlabeled classes')
    return result
