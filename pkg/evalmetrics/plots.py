"""Static evaluation figures."""
from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .classification import CooccurrenceResult, ReliabilityBin, roc_points  # noqa: E402


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)
    return path


def plot_roc_curves(scores: np.ndarray, labels: np.ndarray, class_names: Sequence[str], auc: Dict[str, float],
                    path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 6))
    for i, name in enumerate(class_names):
        points = roc_points(scores[:, i], labels[:, i])
        if points is None:
            continue
        ax.plot(points[:, 0], points[:, 1], label=f'{name} ({auc.get(name, float("nan")):.2f})', lw=1)
    ax.plot([0, 1], [0, 1], 'k--', lw=0.8)
    ax.set_xlabel('False positive rate')
    ax.set_ylabel('True positive rate')
    ax.legend(fontsize=6, loc='lower right')
    return _save(fig, path)


def plot_reliability(bins: Sequence[ReliabilityBin], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.bar([b.lower for b in bins], [b.accuracy for b in bins], width=[b.upper - b.lower for b in bins],
           align='edge', edgecolor='k', alpha=0.7, label='observed')
    ax.plot([0, 1], [0, 1], 'r--', label='calibrated')
    ax.set_xlabel('Confidence')
    ax.set_ylabel('Positive frequency')
    ax.legend()
    return _save(fig, path)


def plot_radar(values: Dict[str, float], path: Path, title: str = 'AUROC per class') -> Path:
    names = list(values)
    angles = np.linspace(0, 2 * np.pi, len(names), endpoint=False)
    data = np.nan_to_num([values[n] for n in names], nan=0.0)
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(polar=True)
    ax.plot(np.r_[angles, angles[:1]], np.r_[data, data[:1]])
    ax.fill(np.r_[angles, angles[:1]], np.r_[data, data[:1]], alpha=0.25)
    ax.set_xticks(angles)
    ax.set_xticklabels(names, fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    return _save(fig, path)


def plot_cooccurrence(result: CooccurrenceResult, path: Path) -> Path:
    ordered = result.ordered()
    fig, ax = plt.subplots(figsize=(7, 6))
    im = ax.imshow(ordered.auc, vmin=0, vmax=1, cmap='viridis')
    ax.set_xticks(range(len(ordered.class_names)))
    ax.set_yticks(range(len(ordered.class_names)))
    ax.set_xticklabels(ordered.class_names, rotation=90, fontsize=7)
    ax.set_yticklabels(ordered.class_names, fontsize=7)
    ax.set_xlabel('label')
    ax.set_ylabel('logit')
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_training_curve(records: Sequence[dict], path: Path) -> Path:
    steps = [r['step'] for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [r['top1'] for r in records], label='top-1')
    ax.plot(steps, [r['top5'] for r in records], label='top-5')
    ax.set_xlabel('step')
    ax.set_ylabel('validation retrieval')
    ax.legend()
    return _save(fig, path)
