"""Padding variable-length token sets and sequence lists into tensors."""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from .positional import PLANES


class EmptySequenceError(ValueError):
    """A sequence has no kept tokens left after filtering."""


@dataclass
class SequenceInput:
    seq_name: str
    kind: str
    plane: str
    latents: np.ndarray
    coords: np.ndarray
    token_ids: Optional[np.ndarray] = None

    @classmethod
    def from_grid(cls, grid, name: Optional[str] = None) -> 'SequenceInput':
        if grid.n_kept == 0:
            raise EmptySequenceError(f'empty sequence after filtering: {grid.seq_name}')
        return cls(seq_name=name if name is not None else grid.seq_name, kind=grid.kind, plane=grid.plane,
                   latents=grid.kept_latents(), coords=grid.kept_coords(),
                   token_ids=np.flatnonzero(grid.kept))

    @property
    def n_tokens(self) -> int:
        return len(self.latents)


@dataclass
class StudyInput:
    study_id: str
    study_name: str
    sequences: List[SequenceInput]

    def __post_init__(self):
        if not self.sequences:
            raise EmptySequenceError(f'study {self.study_id} has no usable sequence')


@dataclass
class StudyBatch:
    latents: torch.Tensor        # (S, T, d)
    coords: torch.Tensor         # (S, T, 3)
    token_pad: torch.Tensor      # (S, T) True at padding
    planes: torch.Tensor         # (S,)
    seq_names: List[str]
    seq_to_study: torch.Tensor   # (S,)
    seq_pad: torch.Tensor        # (B, M) True at padding
    seq_slots: torch.Tensor      # (B, M) index into S, -1 at padding
    study_names: List[str]
    study_ids: List[str]

    @property
    def n_studies(self) -> int:
        return len(self.study_ids)


def collate(studies: Sequence[StudyInput]) -> StudyBatch:
    if not studies:
        raise ValueError('cannot collate an empty batch')
    seqs = [s for study in studies for s in study.sequences]
    for s in seqs:
        if s.n_tokens == 0:
            raise EmptySequenceError(f'empty sequence after filtering: {s.seq_name}')
    t_max = max(s.n_tokens for s in seqs)
    d = seqs[0].latents.shape[1]
    latents = np.zeros((len(seqs), t_max, d), dtype=np.float32)
    coords = np.zeros((len(seqs), t_max, 3), dtype=np.int64)
    token_pad = np.ones((len(seqs), t_max), dtype=bool)
    for i, s in enumerate(seqs):
        latents[i, :s.n_tokens] = s.latents
        coords[i, :s.n_tokens] = s.coords
        token_pad[i, :s.n_tokens] = False

    m_max = max(len(study.sequences) for study in studies)
    seq_slots = np.full((len(studies), m_max), -1, dtype=np.int64)
    seq_to_study = []
    cursor = 0
    for b, study in enumerate(studies):
        for m in range(len(study.sequences)):
            seq_slots[b, m] = cursor
            seq_to_study.append(b)
            cursor += 1

    return StudyBatch(
        latents=torch.from_numpy(latents),
        coords=torch.from_numpy(coords),
        token_pad=torch.from_numpy(token_pad),
        planes=torch.tensor([PLANES.index(s.plane) for s in seqs], dtype=torch.long),
        seq_names=[s.seq_name for s in seqs],
        seq_to_study=torch.tensor(seq_to_study, dtype=torch.long),
        seq_pad=torch.from_numpy(seq_slots < 0),
        seq_slots=torch.from_numpy(seq_slots),
        study_names=[study.study_name for study in studies],
        study_ids=[study.study_id for study in studies],
    )
