"""Training and best-validation selection for the transfer heads."""
import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.metrics import confusion_matrix

from config.experiment import HeadConfig
from evalmetrics.classification import auroc_or_nan
from evalmetrics.records import PredictionRecord
from synthcohort.mapping import ACUITY_LEVELS
from .mlp import MLPHead, acuity_loss, acuity_probs, positive_weights, weighted_bce

logger = logging.getLogger(__name__)


@dataclass
class TrainedHead:
    task: str
    model: MLPHead
    class_names: List[str]
    active: np.ndarray = None
    pos_weight: np.ndarray = None
    acuity_loss: Optional[str] = None
    target_mean: float = 0.0
    target_std: float = 1.0
    best_epoch: int = 0
    best_score: float = float('nan')
    history: List[float] = field(default_factory=list)
    encoder_checksum: Optional[str] = None

    @torch.no_grad()
    def logits(self, x: np.ndarray) -> np.ndarray:
        self.model.eval()
        return self.model(torch.as_tensor(np.asarray(x), dtype=torch.float32)).numpy()

    @torch.no_grad()
    def predict(self, x: np.ndarray) -> np.ndarray:
        """Sigmoid scores (multi-label), class probabilities (acuity) or years (age)."""
        out = torch.from_numpy(self.logits(x))
        if self.task == 'acuity':
            return acuity_probs(out, self.acuity_loss).numpy()
        if self.task == 'age':
            return out[:, 0].numpy() * self.target_std + self.target_mean
        return torch.sigmoid(out).numpy()

    def priority_score(self, x: np.ndarray) -> np.ndarray:
        """Expected acuity level, scaled to [0, 1]."""
        probs = self.predict(x)
        return probs @ np.arange(len(ACUITY_LEVELS)) / (len(ACUITY_LEVELS) - 1)

    def records(self, x: np.ndarray, labels: np.ndarray, study_ids: Sequence[str], attributes: Sequence[dict],
                split: str) -> List[PredictionRecord]:
        logits = self.logits(x)
        return [PredictionRecord(study_id=sid, logits=tuple(float(v) for v in row),
                                 labels=tuple(int(v) for v in lab), attributes=dict(attr), split=split,
                                 task=self.task)
                for sid, row, lab, attr in zip(study_ids, logits, np.asarray(labels), attributes)]

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            'task': self.task, 'state_dict': self.model.state_dict(), 'in_dim': self.model.in_dim,
            'out_dim': self.model.out_dim, 'class_names': self.class_names,
            'active': None if self.active is None else self.active.tolist(),
            'pos_weight': None if self.pos_weight is None else self.pos_weight.tolist(),
            'acuity_loss': self.acuity_loss, 'target_mean': self.target_mean, 'target_std': self.target_std,
            'best_epoch': self.best_epoch, 'best_score': self.best_score, 'history': self.history,
            'encoder_checksum': self.encoder_checksum,
        }, path)
        return path

    @classmethod
    def load(cls, path: Path) -> 'TrainedHead':
        data = torch.load(path, map_location='cpu', weights_only=False)
        model = MLPHead(data['in_dim'], data['out_dim'])
        model.load_state_dict(data['state_dict'])
        model.eval()
        return cls(task=data['task'], model=model, class_names=data['class_names'],
                   active=None if data['active'] is None else np.asarray(data['active'], dtype=bool),
                   pos_weight=None if data['pos_weight'] is None else np.asarray(data['pos_weight']),
                   acuity_loss=data['acuity_loss'], target_mean=data['target_mean'], target_std=data['target_std'],
                   best_epoch=data['best_epoch'], best_score=data['best_score'], history=data['history'],
                   encoder_checksum=data['encoder_checksum'])


def _fit(model: MLPHead, loss_fn: Callable, x_train: torch.Tensor, y_train: torch.Tensor,
         score_fn: Callable[[MLPHead], float], cfg: HeadConfig, seed: int, desc: str):
    """Minibatch AdamW; keep the state with the best validation score (higher is better)."""
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    best_state, best_score, best_epoch, history = None, -np.inf, 0, []
    n = len(x_train)
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = loss_fn(model(x_train[idx]), y_train[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        model.eval()
        score = score_fn(model)
        history.append(score)
        if best_state is None or score > best_score:
            best_state, best_score, best_epoch = copy.deepcopy(model.state_dict()), score, epoch
    model.load_state_dict(best_state)
    model.eval()
    logger.info(f'{desc}: best validation score {best_score:.4f} at epoch {best_epoch}',
                extra={'fields': {'head': desc, 'best_score': best_score, 'best_epoch': best_epoch}})
    return best_score, best_epoch, history


def _tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x), dtype=torch.float32)


def _multilabel_head(task: str, x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray, y_val: np.ndarray,
                     class_names: Sequence[str], cfg: HeadConfig, seed: int,
                     encoder_checksum: Optional[str]) -> TrainedHead:
    torch.manual_seed(seed)
    y_train = np.asarray(y_train)
    weights, active = positive_weights(y_train, class_names)
    model = MLPHead(x_train.shape[1], y_train.shape[1], cfg.dropout)
    pos_weight = torch.as_tensor(weights, dtype=torch.float32)
    active_t = torch.as_tensor(active)
    xv = _tensor(x_val)
    y_val = np.asarray(y_val)

    def score(m: MLPHead) -> float:
        with torch.no_grad():
            probs = torch.sigmoid(m(xv)).numpy()
        aucs = [auroc_or_nan(probs[:, i], y_val[:, i]) for i in np.flatnonzero(active)]
        aucs = [a for a in aucs if not np.isnan(a)]
        return float(np.mean(aucs)) if aucs else 0.0

    best, epoch, history = _fit(model, lambda logits, y: weighted_bce(logits, y, pos_weight, active_t),
                                _tensor(x_train), torch.as_tensor(y_train, dtype=torch.long), score, cfg, seed,
                                f'{task} head')
    return TrainedHead(task=task, model=model, class_names=list(class_names), active=active, pos_weight=weights,
                       best_epoch=epoch, best_score=best, history=history, encoder_checksum=encoder_checksum)


def train_diagnosis_head(x_train, y_train, x_val, y_val, class_names: Sequence[str], cfg: HeadConfig, seed: int,
                         encoder_checksum: Optional[str] = None) -> TrainedHead:
    return _multilabel_head('diagnosis', np.asarray(x_train), y_train, np.asarray(x_val), y_val, class_names, cfg,
                            seed, encoder_checksum)


def train_referral_head(x_train, y_train, x_val, y_val, referral_names: Sequence[str], cfg: HeadConfig, seed: int,
                        encoder_checksum: Optional[str] = None) -> TrainedHead:
    return _multilabel_head('referral', np.asarray(x_train), y_train, np.asarray(x_val), y_val, referral_names,
                            cfg, seed, encoder_checksum)


def train_acuity_head(x_train, levels_train, x_val, levels_val, cfg: HeadConfig, seed: int,
                      encoder_checksum: Optional[str] = None) -> TrainedHead:
    """Three-level head; validation selection by accuracy."""
    torch.manual_seed(seed)
    kind = cfg.acuity_loss
    x_train = np.asarray(x_train)
    out_dim = 2 if kind == 'binary_ordinal' else len(ACUITY_LEVELS)
    model = MLPHead(x_train.shape[1], out_dim, cfg.dropout)
    xv = _tensor(x_val)
    lv = np.asarray(levels_val)

    def score(m: MLPHead) -> float:
        with torch.no_grad():
            pred = acuity_probs(m(xv), kind).argmax(1).numpy()
        return float(np.mean(pred == lv))

    best, epoch, history = _fit(model, lambda logits, y: acuity_loss(logits, y, kind), _tensor(x_train),
                                torch.as_tensor(np.asarray(levels_train), dtype=torch.long), score, cfg, seed,
                                'acuity head')
    return TrainedHead(task='acuity', model=model, class_names=list(ACUITY_LEVELS), acuity_loss=kind,
                       best_epoch=epoch, best_score=best, history=history, encoder_checksum=encoder_checksum)


def train_age_head(x_train, ages_train, x_val, ages_val, cfg: HeadConfig, seed: int,
                   encoder_checksum: Optional[str] = None) -> TrainedHead:
    """Scalar L2 regressor on standardized ages; validation selection by MAE."""
    torch.manual_seed(seed)
    ages_train = np.asarray(ages_train, dtype=np.float64)
    mean = float(ages_train.mean())
    std = float(ages_train.std()) or 1.0
    x_train = np.asarray(x_train)
    model = MLPHead(x_train.shape[1], 1, cfg.dropout)
    xv = _tensor(x_val)
    av = np.asarray(ages_val, dtype=np.float64)

    def score(m: MLPHead) -> float:
        with torch.no_grad():
            pred = m(xv)[:, 0].numpy() * std + mean
        return -float(np.mean(np.abs(pred - av)))

    targets = _tensor((ages_train - mean) / std)
    best, epoch, history = _fit(model, lambda out, y: F.mse_loss(out[:, 0], y), _tensor(x_train), targets, score,
                                cfg, seed, 'age head')
    return TrainedHead(task='age', model=model, class_names=['age_years'], target_mean=mean, target_std=std,
                       best_epoch=epoch, best_score=best, history=history, encoder_checksum=encoder_checksum)


def mean_absolute_error(head: TrainedHead, x: np.ndarray, ages: np.ndarray) -> float:
    return float(np.mean(np.abs(head.predict(x) - np.asarray(ages, dtype=np.float64))))


def acuity_confusion(head: TrainedHead, x: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Rows: true level; columns: predicted level."""
    pred = head.predict(x).argmax(1)
    return confusion_matrix(np.asarray(levels), pred, labels=list(range(len(ACUITY_LEVELS))))


def per_class_auroc(head: TrainedHead, x: np.ndarray, labels: np.ndarray) -> Dict[str, float]:
    probs = head.predict(x)
    labels = np.asarray(labels)
    return {name: auroc_or_nan(probs[:, i], labels[:, i])
            for i, name in enumerate(head.class_names) if head.active is None or head.active[i]}
