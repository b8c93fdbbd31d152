"""ViT_seq, ViT_st and the flat ablation encoder."""
from dataclasses import dataclass
from typing import Dict

import torch
import torch.nn as nn
from einops import rearrange, repeat

from config.experiment import EncoderConfig, SequenceEncoderConfig, StudyEncoderConfig, TextConfig
from textenc.name_encoder import NameEncoder
from textenc.vocab import UNK_NAME
from .batching import StudyBatch
from .blocks import Transformer, init_weights
from .positional import PLANES, sinusoid_1d, token_features


@dataclass
class StudyEmbedding:
    vector: torch.Tensor                    # (B, study output_dim)
    per_sequence: torch.Tensor              # (S, sequence output_dim)
    seq_to_study: torch.Tensor              # (S,)

    def per_sequence_map(self, batch: StudyBatch, index: int) -> Dict[str, torch.Tensor]:
        rows = (self.seq_to_study == index).nonzero(as_tuple=True)[0]
        return {batch.seq_names[int(r)]: self.per_sequence[r] for r in rows}


class SequenceEncoder(nn.Module):
    """Registers + projected sequence-name token + volume tokens -> r_i."""

    def __init__(self, cfg: SequenceEncoderConfig, latent_dim: int, name_dim: int, pos_dim_per_axis: int,
                 readout: str = 'registers', dropout: float = 0.0):
        super().__init__()
        self.cfg = cfg
        self.readout = readout
        self.pos_dim_per_axis = pos_dim_per_axis
        dim = cfg.dim
        self.token_proj = nn.Linear(latent_dim + 3 * pos_dim_per_axis + len(PLANES), dim)
        self.name_proj = nn.Linear(name_dim, dim)
        self.registers = nn.Parameter(torch.empty(1, cfg.n_registers, dim))
        self.transformer = Transformer(dim, cfg.layers, cfg.heads, cfg.head_dim, cfg.mlp_ratio * dim, dropout)
        in_dim = cfg.n_registers * dim if readout == 'registers' else dim
        self.out = nn.Linear(in_dim, cfg.output_dim)
        self.apply(init_weights)
        nn.init.normal_(self.registers, std=0.02)

    def forward(self, latents: torch.Tensor, coords: torch.Tensor, planes: torch.Tensor,
                token_pad: torch.Tensor, name_emb: torch.Tensor) -> torch.Tensor:
        n, r = latents.shape[0], self.cfg.n_registers
        tokens = self.token_proj(token_features(latents, coords, planes, self.pos_dim_per_axis))
        x = torch.cat([repeat(self.registers, '1 r d -> n r d', n=n), self.name_proj(name_emb)[:, None, :], tokens],
                      dim=1)
        lead_pad = torch.zeros(n, r + 1, dtype=torch.bool, device=token_pad.device)
        pad = torch.cat([lead_pad, token_pad], dim=1)
        h = self.transformer(x, key_padding_mask=pad)
        if self.readout == 'registers':
            return self.out(rearrange(h[:, :r], 'n r d -> n (r d)'))
        keep = (~token_pad).unsqueeze(-1).to(h.dtype)
        return self.out((h[:, r + 1:] * keep).sum(1) / keep.sum(1).clamp_min(1.0))


class StudyEncoder(nn.Module):
    """Registers + study-name token + P(r_i) -> concatenated registers."""

    def __init__(self, cfg: StudyEncoderConfig, seq_output_dim: int, name_dim: int, use_study_name: bool = True,
                 dropout: float = 0.0):
        super().__init__()
        self.cfg = cfg
        self.use_study_name = use_study_name
        dim = cfg.dim
        self.seq_proj = nn.Linear(seq_output_dim, dim)
        self.name_proj = nn.Linear(name_dim, dim) if use_study_name else None
        self.registers = nn.Parameter(torch.empty(1, cfg.n_registers, dim))
        self.transformer = Transformer(dim, cfg.layers, cfg.heads, cfg.head_dim, cfg.mlp_ratio * dim, dropout)
        self.apply(init_weights)
        nn.init.normal_(self.registers, std=0.02)

    def forward(self, seq_vectors: torch.Tensor, seq_slots: torch.Tensor, seq_pad: torch.Tensor,
                name_emb: torch.Tensor = None) -> torch.Tensor:
        b, r = seq_slots.shape[0], self.cfg.n_registers
        projected = self.seq_proj(seq_vectors)
        gathered = projected[seq_slots.clamp_min(0)]
        parts = [repeat(self.registers, '1 r d -> b r d', b=b)]
        pads = [torch.zeros(b, r, dtype=torch.bool, device=seq_pad.device)]
        if self.use_study_name:
            parts.append(self.name_proj(name_emb)[:, None, :])
            pads.append(torch.zeros(b, 1, dtype=torch.bool, device=seq_pad.device))
        parts.append(gathered)
        pads.append(seq_pad)
        h = self.transformer(torch.cat(parts, dim=1), key_padding_mask=torch.cat(pads, dim=1))
        return rearrange(h[:, :r], 'b r d -> b (r d)')


class HierarchicalEncoder(nn.Module):
    """E_sn, E_stn, ViT_seq (weights shared across sequences) and ViT_st."""

    def __init__(self, cfg: EncoderConfig, latent_dim: int, text_cfg: TextConfig):
        super().__init__()
        self.cfg = cfg
        self.seq_name_encoder = NameEncoder(text_cfg)
        self.study_name_encoder = NameEncoder(text_cfg) if cfg.use_study_name else None
        self.sequence_encoder = SequenceEncoder(cfg.sequence, latent_dim, text_cfg.name_dim, cfg.pos_dim_per_axis,
                                                cfg.readout, cfg.dropout)
        self.study_encoder = StudyEncoder(cfg.study, cfg.sequence.output_dim, text_cfg.name_dim,
                                          cfg.use_study_name, cfg.dropout)

    @property
    def output_dim(self) -> int:
        return self.cfg.study.output_dim

    @property
    def sequence_dim(self) -> int:
        return self.cfg.sequence.output_dim

    def forward(self, batch: StudyBatch) -> StudyEmbedding:
        names = batch.seq_names if self.cfg.use_sequence_names else [UNK_NAME] * len(batch.seq_names)
        name_emb = self.seq_name_encoder(names)
        seq_vectors = self.sequence_encoder(batch.latents, batch.coords, batch.planes, batch.token_pad, name_emb)
        study_name_emb = self.study_name_encoder(batch.study_names) if self.study_name_encoder is not None else None
        study = self.study_encoder(seq_vectors, batch.seq_slots, batch.seq_pad, study_name_emb)
        return StudyEmbedding(vector=study, per_sequence=seq_vectors, seq_to_study=batch.seq_to_study)


class FlatEncoder(nn.Module):
    """Ablation: one transformer over the tokens of all sequences of a study."""

    def __init__(self, cfg: EncoderConfig, latent_dim: int, text_cfg: TextConfig):
        super().__init__()
        self.cfg = cfg
        seq_cfg = cfg.sequence
        dim = seq_cfg.dim
        self.seq_name_encoder = NameEncoder(text_cfg)
        self.token_proj = nn.Linear(latent_dim + 3 * cfg.pos_dim_per_axis + len(PLANES) + cfg.pos_dim_per_axis, dim)
        self.name_proj = nn.Linear(text_cfg.name_dim, dim)
        self.registers = nn.Parameter(torch.empty(1, cfg.study.n_registers, dim))
        self.transformer = Transformer(dim, seq_cfg.layers, seq_cfg.heads, seq_cfg.head_dim,
                                       seq_cfg.mlp_ratio * dim, cfg.dropout)
        self.out = nn.Linear(cfg.study.n_registers * dim, cfg.study.output_dim)
        self.seq_out = nn.Linear(dim, seq_cfg.output_dim)
        self.apply(init_weights)
        nn.init.normal_(self.registers, std=0.02)

    @property
    def output_dim(self) -> int:
        return self.cfg.study.output_dim

    @property
    def sequence_dim(self) -> int:
        return self.cfg.sequence.output_dim

    def forward(self, batch: StudyBatch) -> StudyEmbedding:
        names = batch.seq_names if self.cfg.use_sequence_names else [UNK_NAME] * len(batch.seq_names)
        name_emb = self.name_proj(self.seq_name_encoder(names))
        s, t = batch.token_pad.shape
        b, m = batch.seq_slots.shape
        r = self.cfg.study.n_registers

        position_in_study = torch.zeros(s, dtype=torch.long)
        for row in range(b):
            slots = batch.seq_slots[row][batch.seq_slots[row] >= 0]
            position_in_study[slots] = torch.arange(len(slots))
        seq_code = sinusoid_1d(position_in_study, self.cfg.pos_dim_per_axis)[:, None, :].expand(-1, t, -1)
        feats = torch.cat([token_features(batch.latents, batch.coords, batch.planes, self.cfg.pos_dim_per_axis),
                           seq_code], dim=-1)
        tokens = self.token_proj(feats) + name_emb[:, None, :]

        slots = batch.seq_slots.clamp_min(0)
        study_tokens = rearrange(tokens[slots], 'b m t d -> b (m t) d')
        study_pad = rearrange(batch.token_pad[slots] | batch.seq_pad[:, :, None], 'b m t -> b (m t)')
        x = torch.cat([repeat(self.registers, '1 r d -> b r d', b=b), study_tokens], dim=1)
        pad = torch.cat([torch.zeros(b, r, dtype=torch.bool), study_pad], dim=1)
        h = self.transformer(x, key_padding_mask=pad)
        study = self.out(rearrange(h[:, :r], 'b r d -> b (r d)'))

        token_out = rearrange(h[:, r:], 'b (m t) d -> b m t d', m=m)
        keep = (~batch.token_pad[slots]).unsqueeze(-1).to(h.dtype)
        per_seq_bm = (token_out * keep).sum(2) / keep.sum(2).clamp_min(1.0)
        per_sequence = torch.zeros(s, per_seq_bm.shape[-1], dtype=h.dtype)
        valid = batch.seq_slots >= 0
        per_sequence = per_sequence.index_put((batch.seq_slots[valid],), per_seq_bm[valid])
        return StudyEmbedding(vector=study, per_sequence=self.seq_out(per_sequence),
                              seq_to_study=batch.seq_to_study)


def build_encoder(cfg: EncoderConfig, latent_dim: int, text_cfg: TextConfig) -> nn.Module:
    if cfg.architecture == 'flat':
        return FlatEncoder(cfg, latent_dim, text_cfg)
    return HierarchicalEncoder(cfg, latent_dim, text_cfg)
