"""Top-k token hits against voxel masks."""
import numpy as np

from synthcohort.schema import VolumetricStudy
from .lime import AttributionMap


def sequence_mask(study: VolumetricStudy, seq_name: str, label_id: int) -> np.ndarray:
    """A study's canonical lesion mask for ``label_id`` mapped onto one sequence's grid (empty if absent)."""
    seq = next(s for s in study.sequences if s.seq_name == seq_name)
    mask = study.masks.get(label_id)
    if mask is None:
        return np.zeros(seq.shape, dtype=bool)
    return seq.align_mask(mask)


def topk_overlap(attr: AttributionMap, mask: np.ndarray, k: int = 3) -> bool:
    """True when any of the k highest-weighted tokens' voxel extents intersects ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    for coord in attr.top_coords(k):
        if mask[attr.voxel_box(coord)].any():
            return True
    return False


def reaches_mask(attr: AttributionMap, mask: np.ndarray) -> bool:
    """True when at least one attributed token's voxel extent intersects ``mask``.

    A lesion that only touches filtered-out background tokens cannot be hit by any ranking.
    """
    mask = np.asarray(mask, dtype=bool)
    return any(mask[attr.voxel_box(coord)].any() for coord in attr.coords)
