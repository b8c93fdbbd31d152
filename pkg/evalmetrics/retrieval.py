"""Top-k study-to-report retrieval."""
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np


def cosine_similarity_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a_norm = np.linalg.norm(a, axis=1, keepdims=True)
    b_norm = np.linalg.norm(b, axis=1, keepdims=True)
    if (a_norm == 0).any() or (b_norm == 0).any():
        raise ValueError('cosine similarity is undefined for a zero-norm embedding')
    return np.clip((a / a_norm) @ (b / b_norm).T, -1.0, 1.0)


def topk_retrieval(sim: np.ndarray, k: int) -> float:
    """Fraction of rows whose matching column (the diagonal) ranks within the top k.

    A competitor tied with the diagonal counts as ranked ahead of it.
    """
    sim = np.asarray(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f'similarity matrix must be square, got {sim.shape}')
    if k < 1:
        raise ValueError('k must be >= 1')
    diag = np.diag(sim)
    ahead = (sim >= diag[:, None]).sum(axis=1) - 1
    return float(np.mean(ahead < k))


@dataclass
class RetrievalResult:
    top: Dict[int, float]
    n_groups: int
    group_size: int

    def as_dict(self) -> dict:
        return {f'top{k}': v for k, v in self.top.items()} | {'n_groups': self.n_groups,
                                                                 'group_size': self.group_size}


def grouped_retrieval(v_m: np.ndarray, v_r: np.ndarray, group_size: int = 100, seed: int = 0,
                      ks: Sequence[int] = (1, 5)) -> RetrievalResult:
    """Mean top-k over a seeded random partition into groups; the remainder group is dropped."""
    n = len(v_m)
    if len(v_r) != n:
        raise ValueError('study and report embeddings differ in count')
    if n < group_size:
        raise ValueError(f'need at least {group_size} pairs for one group, got {n}')
    order = np.random.default_rng(seed).permutation(n)
    n_groups = n // group_size
    scores = {k: [] for k in ks}
    for g in range(n_groups):
        idx = order[g * group_size:(g + 1) * group_size]
        sim = cosine_similarity_matrix(v_m[idx], v_r[idx])
        for k in ks:
            scores[k].append(topk_retrieval(sim, k))
    return RetrievalResult(top={k: float(np.mean(v)) for k, v in scores.items()}, n_groups=n_groups,
                           group_size=group_size)
