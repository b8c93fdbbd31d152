"""The CLIP model: study encoder, report encoder and their projections."""
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn

from config.experiment import ExperimentConfig
from hvit.batching import StudyInput, collate
from hvit.encoder import StudyEmbedding, build_encoder
from textenc.report_lm import ReportEncoder
from .losses import clip_loss, combined_loss, patient_discrimination_loss


@dataclass
class ClipOutputs:
    study: StudyEmbedding
    v_m: torch.Tensor          # (B, projection_dim)
    v_r: torch.Tensor          # (B, projection_dim)
    u: torch.Tensor            # (S, projection_dim)


@dataclass
class LossTerms:
    clip: torch.Tensor
    patdis: torch.Tensor
    total: torch.Tensor


class ClipModel(nn.Module):
    """Encoders plus P_M, P_R, the two-layer P_patdis and the two trainable temperatures.

    ``log_scale`` is the CLIP logit scale in log space (logits = cos * exp(log_scale),
    initialised to 1 / temperature_init). ``patdis_log_temperature`` is log tau_p.
    """

    def __init__(self, cfg: ExperimentConfig, latent_dim: int, report_encoder: ReportEncoder):
        super().__init__()
        obj = cfg.objective
        self.cfg = cfg
        self.encoder = build_encoder(cfg.encoder, latent_dim, cfg.text)
        self.report_lm = report_encoder.model
        self.vocab = report_encoder.vocab
        self.image_proj = nn.Linear(self.encoder.output_dim, obj.projection_dim)
        self.report_proj = nn.Linear(cfg.text.lm_dim, obj.projection_dim)
        self.patdis_proj = nn.Sequential(
            nn.Linear(self.encoder.sequence_dim, obj.patdis_hidden),
            nn.GELU(),
            nn.Linear(obj.patdis_hidden, obj.projection_dim),
        )
        self.log_scale = nn.Parameter(torch.tensor(math.log(1.0 / obj.temperature_init)))
        self.patdis_log_temperature = nn.Parameter(torch.tensor(math.log(obj.patdis_temperature_init)))

    def load_name_encoder(self, state_dict) -> None:
        self.encoder.seq_name_encoder.load_state_dict(state_dict)

    def encode_reports(self, texts: Sequence[str]) -> torch.Tensor:
        ids, pad = self.vocab.batch(list(texts), self.report_lm.max_len)
        features = self.report_lm.features(torch.from_numpy(ids), torch.from_numpy(pad))
        return self.report_proj(features)

    def forward(self, studies: Sequence[StudyInput], texts: Sequence[str]) -> ClipOutputs:
        batch = collate(studies)
        study = self.encoder(batch)
        return ClipOutputs(
            study=study,
            v_m=self.image_proj(study.vector),
            v_r=self.encode_reports(texts),
            u=self.patdis_proj(study.per_sequence),
        )

    def losses(self, out: ClipOutputs) -> LossTerms:
        obj = self.cfg.objective
        clip = clip_loss(out.v_m, out.v_r, self.log_scale)
        if obj.patdis_weight > 0:
            patdis = patient_discrimination_loss(out.u, out.study.seq_to_study, self.patdis_log_temperature,
                                                 suppress_self=obj.suppress_self)
        else:
            patdis = torch.zeros((), dtype=clip.dtype)
        return LossTerms(clip=clip, patdis=patdis, total=combined_loss(clip, patdis, obj.patdis_weight))

    def clamp_scale(self) -> None:
        with torch.no_grad():
            self.log_scale.clamp_(max=math.log(self.cfg.objective.max_logit_scale))

    @property
    def temperature(self) -> float:
        return float(torch.exp(-self.log_scale).item())

    @property
    def patdis_temperature(self) -> float:
        return float(torch.exp(self.patdis_log_temperature).item())


@dataclass
class EmbeddingSet:
    """Frozen-model embeddings of a list of studies, row-aligned with ``study_ids``."""

    study_ids: List[str]
    study: np.ndarray           # pre-projection study vectors (heads consume these)
    v_m: np.ndarray
    v_r: np.ndarray

    def subset(self, ids: Sequence[str]) -> 'EmbeddingSet':
        index = {s: i for i, s in enumerate(self.study_ids)}
        rows = [index[s] for s in ids]
        return EmbeddingSet(list(ids), self.study[rows], self.v_m[rows], self.v_r[rows])


@torch.no_grad()
def embed_examples(model: ClipModel, examples, use_summaries: bool = True, batch_size: int = 32) -> EmbeddingSet:
    model.eval()
    study, v_m, v_r = [], [], []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        out = model([e.to_input() for e in chunk], [e.text(use_summaries) for e in chunk])
        study.append(out.study.vector.numpy())
        v_m.append(out.v_m.numpy())
        v_r.append(out.v_r.numpy())
    return EmbeddingSet(study_ids=[e.study_id for e in examples], study=np.concatenate(study),
                        v_m=np.concatenate(v_m), v_r=np.concatenate(v_r))


@torch.no_grad()
def embed_inputs(model: ClipModel, inputs: Sequence[StudyInput]) -> np.ndarray:
    """Study vectors for already-built inputs (modality drop, explanation re-evaluation)."""
    model.eval()
    return model.encoder(collate(inputs)).vector.numpy()
