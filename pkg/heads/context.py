"""Clinical-context embeddings and their fusion with study embeddings."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from synthcohort.schema import RawReport

logger = logging.getLogger(__name__)


@dataclass
class ContextEmbedding:
    vectors: np.ndarray         # (N, dim)
    provider: str

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @classmethod
    def zeros(cls, n: int, dim: int) -> 'ContextEmbedding':
        return cls(np.zeros((n, dim), dtype=np.float32), 'zeros')


def build_context_embeddings(reports: Sequence[RawReport], client, dim: int, provider: str,
                             max_concurrency: int = 4) -> ContextEmbedding:
    """History text per report (structured findings for the mock), embedded to ``dim``."""

    def one(report: RawReport) -> np.ndarray:
        vec = np.asarray(client.embed(client.history(report), dim), dtype=np.float32)
        if vec.shape != (dim,):
            raise ValueError(f'context provider returned shape {vec.shape}, expected ({dim},)')
        return vec

    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        vectors = list(pool.map(one, reports))
    logger.info(f'built {len(vectors)} {provider} context embeddings of dim {dim}')
    return ContextEmbedding(np.stack(vectors) if vectors else np.zeros((0, dim), np.float32), provider)


def fuse_context(study_emb: np.ndarray, ctx: ContextEmbedding) -> np.ndarray:
    """Concatenate study and context vectors row by row."""
    study_emb = np.asarray(study_emb, dtype=np.float32)
    if len(study_emb) != len(ctx.vectors):
        raise ValueError(f'{len(study_emb)} study embeddings but {len(ctx.vectors)} context embeddings')
    return np.concatenate([study_emb, ctx.vectors], axis=1)


class FusedHead:
    """A head trained on fused inputs, exposed as a function of the study embedding alone.

    The same context row is appended to every study vector, which is what the
    explainer needs when it re-encodes one study under many token masks.
    """

    def __init__(self, head, context_row: np.ndarray):
        self.head = head
        self.context_row = np.asarray(context_row, dtype=np.float32)

    def logits(self, study_emb: np.ndarray) -> np.ndarray:
        study_emb = np.asarray(study_emb, dtype=np.float32)
        ctx = np.broadcast_to(self.context_row, (len(study_emb), len(self.context_row)))
        return self.head.logits(np.concatenate([study_emb, ctx], axis=1))
