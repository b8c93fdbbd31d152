"""LIME over volume tokens: token-removal masks, a locality-weighted ridge surrogate and token rankings."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from sklearn.linear_model import Ridge

from config.experiment import ExplainConfig
from hvit.batching import SequenceInput, StudyInput, collate

logger = logging.getLogger(__name__)

PredictFn = Callable[[np.ndarray], np.ndarray]


class SingularDesignError(ValueError):
    """Too few masked samples for the surrogate's unknowns."""

    def __init__(self, n_samples: int, n_tokens: int):
        self.required = n_tokens + 1
        super().__init__(f'{n_samples} mask samples cannot fit {n_tokens} token weights plus an intercept; '
                         f'need at least {self.required}')


@dataclass
class MaskSample:
    mask: np.ndarray
    logit: float


@dataclass
class AttributionMap:
    seq_name: str
    class_index: int
    weights: np.ndarray          # one per kept token
    coords: np.ndarray           # (n_kept, 3) patch coordinates of those tokens
    patch_dims: Tuple[int, int, int]
    intercept: float = 0.0

    @property
    def ranking(self) -> np.ndarray:
        """Token positions by decreasing weight; ties keep token order."""
        return np.argsort(-self.weights, kind='stable')

    def top_coords(self, k: int) -> np.ndarray:
        return self.coords[self.ranking[:k]]

    def voxel_box(self, coord) -> Tuple[slice, slice, slice]:
        return tuple(slice(int(c) * p, (int(c) + 1) * p) for c, p in zip(coord, self.patch_dims))

    def as_dict(self) -> dict:
        return {
            'seq_name': self.seq_name, 'class_index': self.class_index, 'intercept': self.intercept,
            'patch_dims': list(self.patch_dims),
            'tokens': [{'coord': [int(c) for c in self.coords[i]], 'weight': float(self.weights[i]),
                        'rank': int(r)} for r, i in enumerate(self.ranking)],
        }


class LimeExplainer:
    def __init__(self, n_samples: int = 3000, kernel_width: float = 0.25, ridge: float = 1e-6,
                 keep_prob: float = 0.5, seed: int = 0):
        self.n_samples = n_samples
        self.kernel_width = kernel_width
        self.ridge = ridge
        self.keep_prob = keep_prob
        self.seed = seed

    @classmethod
    def from_config(cls, cfg: ExplainConfig, seed: int) -> 'LimeExplainer':
        return cls(cfg.n_samples, cfg.kernel_width, cfg.ridge, cfg.keep_prob, seed)

    def sample_masks(self, n_tokens: int) -> np.ndarray:
        """(n_samples, n_tokens) keep-masks; row 0 keeps everything and no row is empty."""
        if n_tokens < 2:
            raise ValueError(f'LIME needs a sequence with at least 2 kept tokens, got {n_tokens}')
        if self.n_samples < n_tokens + 1:
            raise SingularDesignError(self.n_samples, n_tokens)
        rng = np.random.default_rng(self.seed)
        masks = rng.random((self.n_samples, n_tokens)) < self.keep_prob
        masks[0] = True
        empty = np.flatnonzero(~masks.any(axis=1))
        masks[empty, rng.integers(n_tokens, size=len(empty))] = True
        return masks

    def kernel(self, masks: np.ndarray) -> np.ndarray:
        """exp(-(1 - cos(mask, all-ones))^2 / sigma^2)."""
        cos = np.sqrt(masks.sum(axis=1) / masks.shape[1])
        return np.exp(-((1.0 - cos) ** 2) / self.kernel_width ** 2)

    def fit(self, masks: np.ndarray, logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Weighted ridge of logits (n_samples,) or (n_samples, C) on masks; returns (coef, intercept)."""
        if len(masks) < masks.shape[1] + 1:
            raise SingularDesignError(len(masks), masks.shape[1])
        surrogate = Ridge(alpha=self.ridge)
        surrogate.fit(masks.astype(np.float64), np.asarray(logits, dtype=np.float64),
                      sample_weight=self.kernel(masks))
        return np.atleast_2d(surrogate.coef_), np.atleast_1d(surrogate.intercept_)

    def explain(self, predict_fn: PredictFn, n_tokens: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (coef (C, n_tokens), intercept (C,), masks) for every output of ``predict_fn``."""
        masks = self.sample_masks(n_tokens)
        logits = predict_fn(masks)
        coef, intercept = self.fit(masks, logits)
        return coef, intercept, masks


def sequence_predict_fn(encoder, head_logits: Callable[[np.ndarray], np.ndarray], study_id: str, study_name: str,
                        sequence: SequenceInput, batch_size: int = 64) -> PredictFn:
    """Logits of every class for the study reduced to one sequence with only the masked-in tokens."""

    @torch.no_grad()
    def predict(masks: np.ndarray) -> np.ndarray:
        encoder.eval()
        out = []
        for start in range(0, len(masks), batch_size):
            inputs = []
            for mask in masks[start:start + batch_size]:
                keep = np.asarray(mask, dtype=bool)
                inputs.append(StudyInput(study_id=study_id, study_name=study_name, sequences=[SequenceInput(
                    seq_name=sequence.seq_name, kind=sequence.kind, plane=sequence.plane,
                    latents=sequence.latents[keep], coords=sequence.coords[keep])]))
            out.append(head_logits(encoder(collate(inputs)).vector.numpy()))
        return np.concatenate(out)

    return predict


def _sequence(example, seq_name: str) -> Tuple[SequenceInput, Tuple[int, int, int]]:
    for grid in example.grids:
        if grid.seq_name == seq_name:
            return SequenceInput.from_grid(grid), tuple(grid.patch_dims)
    raise KeyError(f'{example.study_id} has no sequence {seq_name!r}')


def multilabel_attribution(encoder, head, example, seq_name: str, classes: Sequence[int], cfg: ExplainConfig,
                           seed: int, explainer: Optional[LimeExplainer] = None) -> Dict[int, AttributionMap]:
    """One shared mask set, one surrogate per class."""
    sequence, patch_dims = _sequence(example, seq_name)
    explainer = explainer or LimeExplainer.from_config(cfg, seed)
    predict = sequence_predict_fn(encoder, head.logits, example.study_id, example.study_name, sequence)
    coef, intercept, _ = explainer.explain(predict, sequence.n_tokens)
    return {c: AttributionMap(seq_name=sequence.seq_name, class_index=c, weights=coef[c], coords=sequence.coords,
                              patch_dims=patch_dims, intercept=float(intercept[c]))
            for c in classes}


def lime_attribute(encoder, head, example, seq_name: str, class_index: int, cfg: ExplainConfig,
                   seed: int) -> AttributionMap:
    return multilabel_attribution(encoder, head, example, seq_name, [class_index], cfg, seed)[class_index]
