"""Three-layer MLP head and its loss helpers."""
import logging
from typing import Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from synthcohort.schema import UNLABELED

logger = logging.getLogger(__name__)


class MLPHead(nn.Module):
    """in -> 2*in -> in -> out with GELU and dropout."""

    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.1):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, 2 * in_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(2 * in_dim, in_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(in_dim, out_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def positive_weights(labels: np.ndarray, class_names: Sequence[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Return (p, active): p_i = #negatives / #positives per class over labeled entries.

    A class without positives has no defined weight; it is marked inactive
    (excluded from the loss) and p_i is set to 0.
    """
    labels = np.asarray(labels)
    pos = (labels == 1).sum(axis=0)
    neg = (labels == 0).sum(axis=0)
    active = pos > 0
    weights = np.zeros(labels.shape[1], dtype=np.float64)
    weights[active] = neg[active] / pos[active]
    for i in np.flatnonzero(~active):
        name = class_names[i] if class_names is not None else str(i)
        logger.warning(f'class {name} has no positives in the training split; excluded from the head')
    return weights, active


def weighted_bce(logits: torch.Tensor, targets: torch.Tensor, pos_weight: torch.Tensor,
                 active: torch.Tensor) -> torch.Tensor:
    """Positive-weighted BCE summed over active classes, ignoring UNLABELED entries, mean over studies."""
    mask = (targets != UNLABELED) & active[None, :]
    per_entry = F.binary_cross_entropy_with_logits(logits, targets.clamp_min(0).to(logits.dtype),
                                                   pos_weight=pos_weight, reduction='none')
    return (per_entry * mask).sum() / max(len(logits), 1)


def ordinal_soft_targets(levels: torch.Tensor, n_levels: int, sharpness: float = 2.0) -> torch.Tensor:
    """Target distribution decaying with ordinal distance from the true level."""
    grid = torch.arange(n_levels, dtype=torch.float32)
    return torch.softmax(-sharpness * (grid[None, :] - levels[:, None].float()).abs(), dim=1)


def binary_ordinal_probs(logits: torch.Tensor) -> torch.Tensor:
    """Two cumulative logits (P(>0), P(>1 | >0)) to three class probabilities."""
    gt0 = torch.sigmoid(logits[:, 0])
    gt1 = gt0 * torch.sigmoid(logits[:, 1])
    return torch.stack([1 - gt0, gt0 - gt1, gt1], dim=1)


def acuity_loss(logits: torch.Tensor, levels: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == 'cross_entropy':
        return F.cross_entropy(logits, levels)
    if kind == 'ordinal_soft':
        return -(ordinal_soft_targets(levels, logits.shape[1]) * F.log_softmax(logits, dim=1)).sum(1).mean()
    if kind == 'binary_ordinal':
        first = F.binary_cross_entropy_with_logits(logits[:, 0], (levels > 0).float())
        above = levels > 0
        if not bool(above.any()):
            return first
        second = F.binary_cross_entropy_with_logits(logits[above, 1], (levels[above] > 1).float())
        return first + second
    raise ValueError(f'unknown acuity loss {kind!r}')


def acuity_probs(logits: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == 'binary_ordinal':
        return binary_ordinal_probs(logits)
    return torch.softmax(logits, dim=1)
