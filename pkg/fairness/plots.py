"""Region heat map of turnaround odds ratios and TPR disparity."""
from pathlib import Path
from typing import Dict

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_region_heat(summary: Dict[int, Dict[str, float]], path: Path, columns: int = 3) -> Path:
    """Regions laid out as tiles keyed by region_code; one panel per statistic."""
    regions = sorted(summary)
    rows = int(np.ceil(len(regions) / columns))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3 + rows))
    panels = (('odds_ratio', 'long-turnaround odds ratio', 'RdYlGn_r'),
              ('mean_tpr_disparity', 'mean TPR disparity', 'RdBu'))
    for ax, (key, title, cmap) in zip(axes, panels):
        grid = np.full((rows, columns), np.nan)
        for i, region in enumerate(regions):
            grid[i // columns, i % columns] = summary[region][key]
        im = ax.imshow(grid, cmap=cmap)
        for i, region in enumerate(regions):
            value = summary[region][key]
            ax.text(i % columns, i // columns, f'R{region}\n{value:.2f}', ha='center', va='center', fontsize=8)
        ax.set_title(title)
        ax.set_axis_off()
        fig.colorbar(im, ax=ax, fraction=0.046)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches='tight')
    plt.close(fig)
    return path
