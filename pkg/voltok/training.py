"""Tokenizer training loop."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from config.experiment import TokenizerConfig
from synthcohort.schema import VolumetricStudy
from .codebook import Codebook
from .model import VQTokenizer
from .patching import AXIS_PERMUTATIONS, PatchSpec, patch_array, permute_axes

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; ``step`` is where it happened."""

    def __init__(self, step: int, last_good_checkpoint: Optional[str] = None):
        self.step = step
        self.last_good_checkpoint = last_good_checkpoint
        where = f'; last good checkpoint: {last_good_checkpoint}' if last_good_checkpoint else ''
        super().__init__(f'training diverged (non-finite loss) at step {step}{where}')


@dataclass
class TokenizerHistory:
    val_l1: List[float] = field(default_factory=list)
    val_l1_permuted: List[float] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    usage_perplexity: List[float] = field(default_factory=list)
    reseeded: List[int] = field(default_factory=list)

    @property
    def initial_val_l1(self) -> float:
        return self.val_l1[0]

    @property
    def final_val_l1(self) -> float:
        return self.val_l1[-1]

    @property
    def permutation_ratio(self) -> float:
        """Mean L1 on permuted validation patches over unpermuted, after training."""
        return self.val_l1_permuted[-1] / max(self.val_l1[-1], 1e-12)

    def as_dict(self) -> Dict:
        return {
            'val_l1': self.val_l1, 'val_l1_permuted': self.val_l1_permuted, 'train_loss': self.train_loss,
            'usage_perplexity': self.usage_perplexity, 'reseeded': self.reseeded,
        }


@dataclass
class TrainedTokenizer:
    model: VQTokenizer
    codebook: Codebook
    history: TokenizerHistory
    spec: PatchSpec

    @property
    def checksum(self) -> str:
        return self.model.checksum()


def collect_patches(studies: Sequence[VolumetricStudy], spec: PatchSpec, threshold: float,
                    limit: int, rng: np.random.Generator) -> np.ndarray:
    """Foreground patches of every sequence, subsampled to at most ``limit``."""
    kept = []
    for study in studies:
        for seq in study.sequences:
            _, patches = patch_array(seq.voxels, spec)
            mask = patches.reshape(len(patches), -1).mean(axis=1) >= threshold
            kept.append(patches[mask])
    if not kept or sum(len(k) for k in kept) == 0:
        raise ValueError('no foreground patches to train the tokenizer on')
    patches = np.concatenate(kept).astype(np.float32)
    if len(patches) > limit:
        patches = patches[np.sort(rng.choice(len(patches), size=limit, replace=False))]
    return patches


@torch.no_grad()
def _val_l1(model: VQTokenizer, patches: torch.Tensor, perms: Optional[List] = None) -> float:
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(patches), 512):
        chunk = patches[start:start + 512]
        if perms is not None:
            perm = perms[(start // 512) % len(perms)]
            chunk = permute_axes(chunk, perm)
        recon, _, _, _ = model(chunk)
        total += F.l1_loss(recon, chunk, reduction='sum').item()
        count += chunk.numel()
    return total / max(count, 1)


def train_tokenizer(patches: np.ndarray, cfg: TokenizerConfig, seed: int,
                    permute: Optional[bool] = None, show_progress: bool = False) -> TrainedTokenizer:
    """Train the VQ-VAE on foreground patches.

    Loss is L1 reconstruction plus codebook and β-weighted commitment terms.
    With ``permute`` each minibatch is passed through one random axis
    permutation. Validation L1 is measured before training and after every
    epoch, on both unpermuted and permuted validation patches.
    """
    if len(patches) < 2:
        raise ValueError('train_tokenizer needs at least one batch of patches')
    permute = cfg.permute if permute is None else permute
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    generator = torch.Generator().manual_seed(seed)

    order = rng.permutation(len(patches))
    n_val = max(1, int(round(cfg.val_fraction * len(patches))))
    val = torch.from_numpy(patches[order[:n_val]])
    train = torch.from_numpy(patches[order[n_val:]] if len(patches) - n_val > 0 else patches[order[:n_val]])
    val_perms = [p for p in AXIS_PERMUTATIONS if p != (0, 1, 2)]

    model = VQTokenizer(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = TokenizerHistory()
    history.val_l1.append(_val_l1(model, val))
    history.val_l1_permuted.append(_val_l1(model, val, val_perms))

    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        shuffled = torch.randperm(len(train), generator=generator)
        epoch_loss = 0.0
        batches = range(0, len(train), cfg.batch_size)
        for start in tqdm(batches, desc=f'tokenizer epoch {epoch}', disable=not show_progress):
            batch = train[shuffled[start:start + cfg.batch_size]]
            if permute:
                perm = AXIS_PERMUTATIONS[int(rng.integers(len(AXIS_PERMUTATIONS)))]
                batch = permute_axes(batch, perm).contiguous()
            recon, _, _, vq_loss = model(batch)
            loss = F.l1_loss(recon, batch) + vq_loss
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(batch)
            step += 1

        if (epoch + 1) % cfg.dead_code_epochs == 0:
            with torch.no_grad():
                sample = train[torch.randint(len(train), (min(len(train), 4096),), generator=generator)]
                z_e = model.encode(sample)
            history.reseeded.append(model.quantizer.reseed_dead(z_e, generator))

        history.train_loss.append(epoch_loss / len(train))
        history.val_l1.append(_val_l1(model, val))
        history.val_l1_permuted.append(_val_l1(model, val, val_perms))
        history.usage_perplexity.append(model.codebook().usage_perplexity())
        logger.info(f'tokenizer epoch {epoch}: train {history.train_loss[-1]:.4f} '
                    f'val L1 {history.val_l1[-1]:.4f} (permuted {history.val_l1_permuted[-1]:.4f})',
                    extra={'fields': {'epoch': epoch, 'val_l1': history.val_l1[-1],
                                      'usage_perplexity': history.usage_perplexity[-1]}})

    model.eval()
    spec = PatchSpec(tuple(cfg.patch_dims), cfg.latent_dim)
    return TrainedTokenizer(model=model, codebook=model.codebook(), history=history, spec=spec)
