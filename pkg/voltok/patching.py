"""3D patching and axis-permutation augmentation."""
import itertools
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from einops import rearrange

Coord = Tuple[int, int, int]
AXIS_PERMUTATIONS: Tuple[Tuple[int, int, int], ...] = tuple(itertools.permutations(range(3)))


class NonFiniteInputError(ValueError):
    """Raised when voxels or latents contain NaN/inf."""


@dataclass(frozen=True)
class PatchSpec:
    patch_dims: Tuple[int, int, int]
    latent_dim: int

    def __post_init__(self):
        if any(p <= 0 for p in self.patch_dims):
            raise ValueError(f'patch_dims must be positive, got {self.patch_dims}')

    @property
    def patch_voxels(self) -> int:
        px, py, pz = self.patch_dims
        return px * py * pz

    @property
    def compression(self) -> int:
        return self.patch_voxels // self.latent_dim

    def grid_shape(self, volume_shape: Sequence[int]) -> Tuple[int, int, int]:
        return tuple(-(-n // p) for n, p in zip(volume_shape, self.patch_dims))


def pad_to_patches(voxels: np.ndarray, spec: PatchSpec) -> np.ndarray:
    target = [g * p for g, p in zip(spec.grid_shape(voxels.shape), spec.patch_dims)]
    pad = [(0, t - n) for t, n in zip(target, voxels.shape)]
    return np.pad(voxels, pad, mode='constant', constant_values=0.0)


def patch_array(voxels: np.ndarray, spec: PatchSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised patching: (coords (n, 3), patches (n, px, py, pz)) in C order of the patch grid."""
    if voxels.size == 0 or voxels.ndim != 3:
        raise ValueError(f'cannot patch an empty or non-3D volume of shape {voxels.shape}')
    if not np.all(np.isfinite(voxels)):
        raise NonFiniteInputError('volume contains non-finite intensities')
    padded = pad_to_patches(voxels, spec)
    px, py, pz = spec.patch_dims
    patches = rearrange(padded, '(gx px) (gy py) (gz pz) -> (gx gy gz) px py pz', px=px, py=py, pz=pz)
    gx, gy, gz = spec.grid_shape(voxels.shape)
    coords = np.stack(np.meshgrid(np.arange(gx), np.arange(gy), np.arange(gz), indexing='ij'), axis=-1)
    return coords.reshape(-1, 3).astype(np.int32), np.ascontiguousarray(patches)


def patch_volume(voxels: np.ndarray, spec: PatchSpec) -> List[Tuple[Coord, np.ndarray]]:
    """Split a volume into zero-padded patches covering the padded grid exactly once."""
    coords, patches = patch_array(voxels, spec)
    return [(tuple(int(c) for c in coord), patch) for coord, patch in zip(coords, patches)]


def permute_axes(subvolume, perm: Sequence[int]):
    """Permute the 3 spatial (trailing) axes of a patch or a batch of patches."""
    perm = tuple(perm)
    if sorted(perm) != [0, 1, 2]:
        raise ValueError(f'{perm} is not a permutation of the three spatial axes')
    lead = subvolume.ndim - 3
    order = tuple(range(lead)) + tuple(lead + p for p in perm)
    if isinstance(subvolume, np.ndarray):
        return np.transpose(subvolume, order)
    return subvolume.permute(*order)


def inverse_permutation(perm: Sequence[int]) -> Tuple[int, int, int]:
    return tuple(int(i) for i in np.argsort(perm))


def random_axis_permutation(batch: List, rng: np.random.Generator) -> Tuple[List, Tuple[int, int, int]]:
    """Bucket the batch by patch shape, pick one bucket and permute every patch in it.

    Returns (permuted bucket, permutation). The same permutation is applied to
    every patch so the permuted minibatch keeps a single shape.
    """
    if not batch:
        raise ValueError('random_axis_permutation needs a nonempty batch')
    buckets: Dict[Tuple[int, ...], List] = {}
    for sub in batch:
        buckets.setdefault(tuple(sub.shape), []).append(sub)
    shapes = sorted(buckets)
    chosen = buckets[shapes[int(rng.integers(len(shapes)))]]
    perm = AXIS_PERMUTATIONS[int(rng.integers(len(AXIS_PERMUTATIONS)))]
    return [permute_axes(sub, perm) for sub in chosen], perm
