"""Attribution files and per-slice overlay images."""
import json
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use('Agg')
import matplotlib.patches as mpatches  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lime import AttributionMap  # noqa: E402


def export_attribution(path: Path, study_id: str, class_name: str, attr: AttributionMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {'study_id': study_id, 'class_name': class_name, **attr.as_dict()}
    path.write_text(json.dumps(payload, indent=2), encoding='utf-8')
    return path


def export_overlays(out_dir: Path, voxels: np.ndarray, attr: AttributionMap, k: int = 3,
                    prefix: str = 'slice') -> List[Path]:
    """One PNG per slice along the last axis that holds a top-k token; boxes coloured by rank."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    colors = plt.cm.autumn(np.linspace(0, 1, k))
    top = attr.top_coords(k)
    written = []
    for z in range(voxels.shape[2]):
        boxes = [(rank, attr.voxel_box(c)) for rank, c in enumerate(top)
                 if attr.voxel_box(c)[2].start <= z < attr.voxel_box(c)[2].stop]
        if not boxes:
            continue
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(voxels[:, :, z].T, cmap='gray', origin='lower', vmin=0, vmax=1)
        for rank, (sx, sy, _) in boxes:
            ax.add_patch(mpatches.Rectangle((sx.start - 0.5, sy.start - 0.5), sx.stop - sx.start,
                                            sy.stop - sy.start, fill=False, lw=1.5, edgecolor=colors[rank]))
            ax.text(sx.start, sy.start, str(rank + 1), color=colors[rank], fontsize=8)
        ax.set_axis_off()
        path = out_dir / f'{prefix}_z{z:03d}.png'
        fig.savefig(path, dpi=100, bbox_inches='tight')
        plt.close(fig)
        written.append(path)
    return written
