"""Token grids and the on-disk token cache."""
import hashlib
import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from synthcohort.schema import SequenceVolume, VolumetricStudy
from .codebook import Codebook, quantize_many
from .model import VQTokenizer
from .patching import PatchSpec, patch_array

logger = logging.getLogger(__name__)

CACHE_MAGIC = b'VTOK'
CACHE_VERSION = 1


@dataclass(frozen=True)
class TokenGrid:
    """All patches of one sequence: coordinates, latents z_e, codes and the background filter."""

    seq_name: str
    kind: str
    plane: str
    source_orientation: Tuple[int, int, int]
    patch_dims: Tuple[int, int, int]
    threshold: float
    coords: np.ndarray
    latents: np.ndarray
    codes: np.ndarray
    kept: np.ndarray
    mean_intensity: np.ndarray

    @property
    def n_tokens(self) -> int:
        return len(self.codes)

    @property
    def n_kept(self) -> int:
        return int(self.kept.sum())

    def filtered(self, threshold: float) -> 'TokenGrid':
        """Re-apply the background filter at another threshold."""
        return replace(self, threshold=float(threshold), kept=self.mean_intensity >= threshold)

    def kept_coords(self) -> np.ndarray:
        return self.coords[self.kept]

    def kept_latents(self) -> np.ndarray:
        return self.latents[self.kept]

    def with_kept(self, kept: np.ndarray) -> 'TokenGrid':
        return replace(self, kept=np.asarray(kept, dtype=bool))

    def voxel_box(self, coord) -> Tuple[slice, slice, slice]:
        """Voxel extent of a token in its sequence grid."""
        return tuple(slice(int(c) * p, (int(c) + 1) * p) for c, p in zip(coord, self.patch_dims))


def tokenize_sequence(seq: SequenceVolume, tokenizer: VQTokenizer, codebook: Codebook,
                      spec: PatchSpec, threshold: float) -> TokenGrid:
    coords, patches = patch_array(seq.voxels, spec)
    mean = patches.reshape(len(patches), -1).mean(axis=1).astype(np.float32)
    latents = tokenizer.encode_numpy(patches).astype(np.float32)
    codes, _ = quantize_many(latents, codebook)
    return TokenGrid(seq_name=seq.seq_name, kind=seq.kind, plane=seq.plane,
                     source_orientation=tuple(seq.orientation), patch_dims=tuple(spec.patch_dims),
                     threshold=float(threshold), coords=coords, latents=latents,
                     codes=codes.astype(np.int32), kept=mean >= threshold, mean_intensity=mean)


class TokenCache:
    """One little-endian binary file per (study_id, seq_name, tokenizer checksum).

    File layout: magic ``VTOK``, u16 version, u32 header length, JSON header,
    then coords ``<i4`` (n, 3), codes ``<i4``, kept ``u1``, mean ``<f4``,
    latents ``<f4`` (n, d).
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(study_id: str, seq_name: str, checksum: str) -> str:
        return hashlib.sha256(f'{study_id}\x00{seq_name}\x00{checksum}'.encode()).hexdigest()[:24]

    def path(self, study_id: str, seq_name: str, checksum: str) -> Path:
        return self.root / f'{self.key(study_id, seq_name, checksum)}.vtok'

    def put(self, study_id: str, grid: TokenGrid, checksum: str) -> Path:
        header = json.dumps({
            'study_id': study_id, 'seq_name': grid.seq_name, 'kind': grid.kind, 'plane': grid.plane,
            'orientation': list(grid.source_orientation), 'patch_dims': list(grid.patch_dims),
            'threshold': grid.threshold, 'checksum': checksum,
            'n': grid.n_tokens, 'd': int(grid.latents.shape[1]),
        }, sort_keys=True).encode('utf-8')
        path = self.path(study_id, grid.seq_name, checksum)
        with open(path, 'wb') as f:
            f.write(CACHE_MAGIC)
            f.write(struct.pack('<HI', CACHE_VERSION, len(header)))
            f.write(header)
            f.write(grid.coords.astype('<i4').tobytes())
            f.write(grid.codes.astype('<i4').tobytes())
            f.write(grid.kept.astype('u1').tobytes())
            f.write(grid.mean_intensity.astype('<f4').tobytes())
            f.write(grid.latents.astype('<f4').tobytes())
        return path

    def get(self, study_id: str, seq_name: str, checksum: str) -> Optional[TokenGrid]:
        path = self.path(study_id, seq_name, checksum)
        if not path.exists():
            self.misses += 1
            return None
        raw = path.read_bytes()
        if raw[:4] != CACHE_MAGIC:
            self.misses += 1
            return None
        version, header_len = struct.unpack('<HI', raw[4:10])
        header = json.loads(raw[10:10 + header_len].decode('utf-8'))
        if version != CACHE_VERSION or header['checksum'] != checksum:
            self.misses += 1
            return None
        n, d = header['n'], header['d']
        offset = 10 + header_len

        def take(dtype: str, count: int) -> np.ndarray:
            nonlocal offset
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
            offset += arr.nbytes
            return arr

        coords = take('<i4', n * 3).reshape(n, 3).astype(np.int32)
        codes = take('<i4', n).astype(np.int32)
        kept = take('u1', n).astype(bool)
        mean = take('<f4', n).astype(np.float32)
        latents = take('<f4', n * d).reshape(n, d).astype(np.float32)
        self.hits += 1
        return TokenGrid(seq_name=header['seq_name'], kind=header['kind'], plane=header['plane'],
                         source_orientation=tuple(header['orientation']), patch_dims=tuple(header['patch_dims']),
                         threshold=header['threshold'], coords=coords, latents=latents, codes=codes,
                         kept=kept, mean_intensity=mean)


def tokenize_and_cache(study: VolumetricStudy, tokenizer: VQTokenizer, codebook: Codebook, spec: PatchSpec,
                       threshold: float, cache: TokenCache, checksum: Optional[str] = None) -> Dict[str, TokenGrid]:
    """Token grids for every sequence of a study, served from cache when the checksum matches."""
    checksum = checksum or tokenizer.checksum()
    grids = {}
    for seq in study.sequences:
        grid = cache.get(study.study_id, seq.seq_name, checksum)
        if grid is None or grid.threshold != threshold:
            grid = tokenize_sequence(seq, tokenizer, codebook, spec, threshold)
            cache.put(study.study_id, grid, checksum)
        grids[seq.seq_name] = grid
    return grids
