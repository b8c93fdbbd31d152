"""Rule-based report summarization."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from synthcohort.grammar import COMPARISON_TERMS, FINDING_PATTERN, split_sentences
from synthcohort.schema import RawReport

logger = logging.getLogger(__name__)

NORMAL_ITEM = 'no significant abnormality'


@dataclass(frozen=True)
class SummarizedReport:
    items: Tuple[str, ...]
    source_id: Optional[str] = None

    @property
    def is_normal(self) -> bool:
        return self.items == (NORMAL_ITEM,)

    def as_text(self, order: Optional[Tuple[int, ...]] = None) -> str:
        items = self.items if order is None else tuple(self.items[i] for i in order)
        return '. '.join(items) + '.'


def summarize(report: RawReport, source_id: Optional[str] = None) -> SummarizedReport:
    """Keep only finding sentences, itemized in report order.

    Comparison qualifiers are dropped; a report with no finding sentence
    summarizes to the single canonical normal item.
    """
    items = []
    for sentence in split_sentences(report.prose):
        match = FINDING_PATTERN.match(sentence)
        if not match:
            continue
        # the qualifier group is never carried into the item
        items.append(f"{match.group('severity')} {match.group('laterality')} {match.group('phrase').strip()}")
    if not items:
        items = [NORMAL_ITEM]
    return SummarizedReport(items=tuple(items), source_id=source_id)


def summary_as_report(summary: SummarizedReport) -> RawReport:
    """Render a summary back into report prose (used to check idempotence)."""
    return RawReport(prose=' '.join(f'{item}.' for item in summary.items))


def summarize_with_client(report: RawReport, source_id: Optional[str] = None, client=None) -> SummarizedReport:
    """Summarize through an external SummaryClient, falling back to the rule summarizer on failure."""
    if client is None:
        return summarize(report, source_id)
    try:
        items = client.summarize(report)
    except Exception as e:
        logger.error(f'summary client failed for {source_id}: {e}', exc_info=True)
        return summarize(report, source_id)
    items = [i for i in items if not any(term in i.lower() for term in COMPARISON_TERMS)]
    return SummarizedReport(items=tuple(items) or (NORMAL_ITEM,), source_id=source_id)
