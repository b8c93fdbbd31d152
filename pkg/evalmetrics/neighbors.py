"""Normalized positive rate of nearest neighbours in embedding space."""
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from synthcohort.schema import UNLABELED
from .retrieval import cosine_similarity_matrix


@dataclass
class NprResult:
    npr_all: float
    npr_pos: float
    dataset_rate: float


def normalized_positive_rate(neighbor_rate: float, dataset_rate: float) -> float:
    if dataset_rate <= 0:
        raise ValueError('dataset positive rate must be > 0')
    return neighbor_rate / dataset_rate


def nearest_neighbors(embeddings: np.ndarray, k: int) -> np.ndarray:
    """(N, k) indices of the k most cosine-similar other studies (self excluded)."""
    n = len(embeddings)
    if k >= n:
        raise ValueError(f'k={k} needs more than {k} studies, got {n}')
    sim = cosine_similarity_matrix(embeddings, embeddings)
    np.fill_diagonal(sim, -np.inf)
    idx = np.argpartition(-sim, k - 1, axis=1)[:, :k]
    return idx


def npr(embeddings: np.ndarray, labels: np.ndarray, class_names: Sequence[str], k: int = 20) -> Dict[str, NprResult]:
    """Per class: positive rate among each study's k neighbours over the dataset positive rate.

    ``npr_all`` averages over every study, ``npr_pos`` over positive studies
    only. Classes without positives are omitted.
    """
    labels = np.asarray(labels)
    neighbors = nearest_neighbors(np.asarray(embeddings), k)
    results = {}
    for c, name in enumerate(class_names):
        y = np.where(labels[:, c] == UNLABELED, 0, labels[:, c])
        rate = float(y.mean())
        if rate == 0:
            continue
        neighbor_rate = y[neighbors].mean(axis=1)
        positives = y == 1
        results[name] = NprResult(
            npr_all=normalized_positive_rate(float(neighbor_rate.mean()), rate),
            npr_pos=normalized_positive_rate(float(neighbor_rate[positives].mean()), rate),
            dataset_rate=rate,
        )
    return results
