"""Codebook, nearest-entry quantization and the straight-through VQ layer."""
import hashlib
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .patching import NonFiniteInputError


@dataclass
class Codebook:
    entries: np.ndarray
    usage_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float32)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ValueError('a codebook needs K >= 2 entries of dimension d')
        if not np.all(np.isfinite(self.entries)):
            raise NonFiniteInputError('codebook entries must be finite')
        if self.usage_counts is None:
            self.usage_counts = np.zeros(self.entries.shape[0], dtype=np.int64)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def checksum(self) -> str:
        return hashlib.sha256(self.entries.astype('<f4').tobytes()).hexdigest()

    def usage_perplexity(self) -> float:
        total = self.usage_counts.sum()
        if total == 0:
            return 0.0
        p = self.usage_counts[self.usage_counts > 0] / total
        return float(np.exp(-(p * np.log(p)).sum()))


def quantize_many(z_e: np.ndarray, cb: Codebook) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest codebook entry for each row; ties resolve to the lowest index."""
    z = np.asarray(z_e, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != cb.dim:
        raise ValueError(f'latent has dimension {z.shape[1]}, codebook expects {cb.dim}')
    if not np.all(np.isfinite(z)):
        raise NonFiniteInputError('cannot quantize a non-finite latent')
    entries = cb.entries.astype(np.float64)
    distances = ((z[:, None, :] - entries[None, :, :]) ** 2).sum(axis=-1)
    indices = np.argmin(distances, axis=1)
    return indices, cb.entries[indices]


def quantize(z_e: np.ndarray, cb: Codebook) -> Tuple[int, np.ndarray]:
    indices, z_q = quantize_many(np.asarray(z_e).reshape(1, -1), cb)
    return int(indices[0]), z_q[0]


class VectorQuantizer(nn.Module):
    """Straight-through vector quantizer with codebook and commitment losses."""

    def __init__(self, num_embeddings: int, embedding_dim: int, commitment_cost: float = 0.25):
        super().__init__()
        self.num_embeddings = num_embeddings
        self.embedding_dim = embedding_dim
        self.commitment_cost = commitment_cost

        self.embedding = nn.Embedding(num_embeddings, embedding_dim)
        self.embedding.weight.data.uniform_(-1 / num_embeddings, 1 / num_embeddings)
        self.register_buffer('usage_count', torch.zeros(num_embeddings, dtype=torch.long))
        self.register_buffer('epoch_usage', torch.zeros(num_embeddings, dtype=torch.long))

    def nearest(self, z_e: torch.Tensor) -> torch.Tensor:
        distances = torch.cdist(z_e, self.embedding.weight) ** 2
        return torch.argmin(distances, dim=1)

    def forward(self, z_e: torch.Tensor):
        indices = self.nearest(z_e)
        z_q = self.embedding(indices)

        codebook_loss = F.mse_loss(z_q, z_e.detach())
        commitment_loss = F.mse_loss(z_e, z_q.detach())
        loss = codebook_loss + self.commitment_cost * commitment_loss

        if self.training:
            counts = torch.bincount(indices, minlength=self.num_embeddings)
            self.usage_count += counts
            self.epoch_usage += counts

        z_q_st = z_e + (z_q - z_e).detach()
        return z_q_st, indices, loss

    @torch.no_grad()
    def reseed_dead(self, z_e: torch.Tensor, generator: torch.Generator) -> int:
        """Re-seed entries unused since the last call from random encoder outputs."""
        dead = (self.epoch_usage == 0).nonzero(as_tuple=True)[0]
        if len(dead) and len(z_e):
            picks = torch.randint(len(z_e), (len(dead),), generator=generator)
            self.embedding.weight.data[dead] = z_e[picks].to(self.embedding.weight.dtype)
        self.epoch_usage.zero_()
        return int(len(dead))

    def codebook(self) -> Codebook:
        return Codebook(entries=self.embedding.weight.detach().cpu().numpy().copy(),
                        usage_counts=self.usage_count.cpu().numpy().copy())
