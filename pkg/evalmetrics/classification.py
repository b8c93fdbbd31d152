"""AUROC, mean AUROC, calibration bins and the logit/label co-occurrence matrix."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.stats import rankdata
from sklearn.metrics import roc_curve

from synthcohort.schema import UNLABELED
from .records import PredictionRecord, records_to_arrays


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Normalized Mann-Whitney U with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    keep = labels != UNLABELED
    scores, labels = scores[keep], labels[keep]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError('AUROC needs at least one positive and one negative')
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_or_nan(scores, labels) -> float:
    try:
        return auroc(scores, labels)
    except ValueError:
        return float('nan')


@dataclass
class MaucResult:
    per_class: Dict[str, float]
    mean: float

    def as_dict(self) -> dict:
        return {'mauc': self.mean, 'per_class': self.per_class}


def mauc(records: Sequence[PredictionRecord], class_names: Sequence[str]) -> MaucResult:
    """Unweighted mean AUROC over classes that have both outcomes present."""
    scores, labels = records_to_arrays(records)
    per_class = {name: auroc_or_nan(scores[:, i], labels[:, i]) for i, name in enumerate(class_names)}
    defined = [v for v in per_class.values() if not np.isnan(v)]
    return MaucResult(per_class=per_class, mean=float(np.mean(defined)) if defined else float('nan'))


@dataclass
class ReliabilityBin:
    lower: float
    upper: float
    confidence: float
    accuracy: float
    balanced_accuracy: float
    count: int


def reliability_diagram(scores: Sequence[float], labels: Sequence[int], bin_width: float = 0.1,
                        decision_threshold: float = 0.5) -> List[ReliabilityBin]:
    """Bins of width ``bin_width`` partitioning [0, 1]; empty bins are omitted.

    A score on an edge belongs to the bin that edge opens; 1.0 falls in the last
    bin, which is narrower when the width does not divide 1.

    ``accuracy`` is the positive frequency in the bin (the identity line is
    perfect calibration); ``balanced_accuracy`` scores the thresholded decision
    inside the bin, averaging recall over the outcomes present.
    """
    scores = np.clip(np.asarray(scores, dtype=np.float64).ravel(), 0.0, 1.0)
    labels = np.asarray(labels).ravel()
    keep = labels != UNLABELED
    scores, labels = scores[keep], labels[keep]
    n_bins = int(np.ceil(1.0 / bin_width - 1e-9))
    lowers = np.round(np.arange(n_bins) * bin_width, 12)
    uppers = np.append(lowers[1:], 1.0)
    index = np.digitize(scores, lowers) - 1
    bins = []
    for b in range(n_bins):
        sel = index == b
        if not sel.any():
            continue
        y = labels[sel]
        pred = scores[sel] >= decision_threshold
        recalls = [float(np.mean(pred[y == c] == bool(c))) for c in (0, 1) if (y == c).any()]
        bins.append(ReliabilityBin(lower=float(lowers[b]), upper=float(uppers[b]),
                                   confidence=float(scores[sel].mean()), accuracy=float(y.mean()),
                                   balanced_accuracy=float(np.mean(recalls)), count=int(sel.sum())))
    return bins


@dataclass
class CooccurrenceResult:
    auc: np.ndarray             # auc[i, j]: logit i scored against label j
    label_correlation: np.ndarray
    order: List[int]
    class_names: List[str]

    def ordered(self) -> 'CooccurrenceResult':
        idx = np.asarray(self.order)
        return CooccurrenceResult(self.auc[np.ix_(idx, idx)], self.label_correlation[np.ix_(idx, idx)],
                                  list(range(len(idx))), [self.class_names[i] for i in idx])


def cooccurrence_matrix(records: Sequence[PredictionRecord], class_names: Sequence[str],
                        cluster: bool = False) -> CooccurrenceResult:
    scores, labels = records_to_arrays(records)
    n = len(class_names)
    auc = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            auc[i, j] = auroc_or_nan(scores[:, i], labels[:, j])
    y = np.where(labels == UNLABELED, 0, labels).astype(np.float64)
    with np.errstate(invalid='ignore', divide='ignore'):
        corr = np.corrcoef(y.T)
    order = list(range(n))
    if cluster and n > 2:
        features = np.nan_to_num(auc, nan=0.5)
        order = [int(i) for i in leaves_list(linkage(features, method='average'))]
    return CooccurrenceResult(auc=auc, label_correlation=np.atleast_2d(corr), order=order,
                              class_names=list(class_names))


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> Optional[np.ndarray]:
    """(fpr, tpr) pairs at every distinct threshold, for plotting."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    keep = labels != UNLABELED
    scores, labels = scores[keep], labels[keep]
    if (labels == 1).sum() == 0 or (labels == 0).sum() == 0:
        return None
    fpr, tpr, _ = roc_curve(labels, scores)
    return np.stack([fpr, tpr], axis=1)
