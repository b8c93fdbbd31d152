"""Character-level name encoders E_sn / E_stn and E_sn's contrastive pretraining."""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.metrics import silhouette_score
from tqdm import tqdm

from config.experiment import TextConfig
from hvit.blocks import Transformer, init_weights
from objectives.losses import clip_loss
from .vocab import CharVocab

logger = logging.getLogger(__name__)


class NameEncoder(nn.Module):
    """3-layer character transformer, mean-pooled and projected to ``name_dim``."""

    def __init__(self, cfg: TextConfig):
        super().__init__()
        self.vocab = CharVocab()
        self.max_len = cfg.name_max_len
        self.dim = cfg.name_dim
        self.char_emb = nn.Embedding(len(self.vocab), cfg.name_dim)
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.name_max_len, cfg.name_dim))
        self.transformer = Transformer(cfg.name_dim, cfg.name_layers, cfg.name_heads,
                                       cfg.name_dim // cfg.name_heads, 4 * cfg.name_dim)
        self.out = nn.Linear(cfg.name_dim, cfg.name_dim)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.pos_emb, std=0.02)

    def forward(self, names: Sequence[str]) -> torch.Tensor:
        ids, pad = self.vocab.batch(names, self.max_len)
        ids, pad = torch.from_numpy(ids).to(self.pos_emb.device), torch.from_numpy(pad).to(self.pos_emb.device)
        h = self.transformer(self.char_emb(ids) + self.pos_emb, key_padding_mask=pad)
        keep = (~pad).unsqueeze(-1).to(h.dtype)
        return self.out((h * keep).sum(1) / keep.sum(1).clamp_min(1.0))

    @torch.no_grad()
    def encode_numpy(self, names: Sequence[str]) -> np.ndarray:
        self.eval()
        return self.forward(list(names)).cpu().numpy()


def grid_summary(grid) -> np.ndarray:
    """Fixed-size description of a token grid: kept-latent mean and std plus grid extents."""
    latents = grid.kept_latents()
    if len(latents) == 0:
        latents = grid.latents
    extents = grid.coords.max(axis=0) + 1
    return np.concatenate([latents.mean(0), latents.std(0), extents / 16.0]).astype(np.float32)


class VolumeSummaryHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, 2 * out_dim), nn.GELU(), nn.Linear(2 * out_dim, out_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


@dataclass
class NamePretraining:
    encoder: NameEncoder
    volume_head: VolumeSummaryHead
    train_loss: List[float] = field(default_factory=list)

    @torch.no_grad()
    def retrieval_top1(self, pairs: Sequence[Tuple[str, object]]) -> float:
        """Fraction of volumes whose own name is the most similar among the batch's names."""
        if not pairs:
            return 0.0
        self.encoder.eval()
        names = F.normalize(self.encoder([n for n, _ in pairs]), dim=-1)
        vols = F.normalize(self.volume_head(torch.from_numpy(np.stack([grid_summary(g) for _, g in pairs]))),
                           dim=-1)
        sim = vols @ names.T
        # a name identical to the true one is an equally correct answer
        correct = [names[sim[i].argmax()].allclose(names[i]) for i in range(len(pairs))]
        return float(np.mean(correct))


def name_silhouette(encoder: NameEncoder, names: Sequence[str], groups: Sequence[str]) -> float:
    """Silhouette of name embeddings grouped by (plane, contrast) under cosine distance."""
    emb = encoder.encode_numpy(names)
    return float(silhouette_score(emb, list(groups), metric='cosine'))


def pretrain_name_encoder(pairs: Sequence[Tuple[str, object]], cfg: TextConfig, seed: int,
                          temperature: float = 0.07, show_progress: bool = False) -> NamePretraining:
    """Contrastive pretraining of E_sn against a small summary of each sequence's tokens."""
    if not pairs:
        raise ValueError('pretrain_name_encoder needs at least one (name, grid) pair')
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    encoder = NameEncoder(cfg)
    summaries = np.stack([grid_summary(g) for _, g in pairs])
    head = VolumeSummaryHead(summaries.shape[1], cfg.name_dim)
    result = NamePretraining(encoder=encoder, volume_head=head)
    params = list(encoder.parameters()) + list(head.parameters())
    optimizer = torch.optim.AdamW(params, lr=cfg.name_learning_rate)
    log_scale = torch.tensor(float(np.log(1.0 / temperature)))
    names = [n for n, _ in pairs]

    for epoch in tqdm(range(cfg.name_epochs), desc='name encoder', disable=not show_progress):
        encoder.train()
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), cfg.name_batch_size):
            idx = order[start:start + cfg.name_batch_size]
            if len(idx) < 2:
                continue
            name_emb = encoder([names[i] for i in idx])
            vol_emb = head(torch.from_numpy(summaries[idx]))
            loss = clip_loss(vol_emb, name_emb, log_scale)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
        result.train_loss.append(total)
    encoder.eval()
    logger.info(f'name encoder pretrained for {cfg.name_epochs} epochs on {len(pairs)} pairs')
    return result
