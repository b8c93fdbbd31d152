"""CLIP and patient-discrimination losses."""
import torch
import torch.nn.functional as F


class ZeroNormError(ValueError):
    """Cosine similarity is undefined for a zero-norm embedding."""


def _unit(x: torch.Tensor, name: str) -> torch.Tensor:
    norms = x.norm(dim=-1)
    if bool((norms == 0).any()):
        raise ZeroNormError(f'{name} contains a zero-norm embedding')
    if not bool(torch.isfinite(x).all()):
        raise ValueError(f'{name} contains non-finite values')
    return x / norms.unsqueeze(-1)


def clip_loss(v_m: torch.Tensor, v_r: torch.Tensor, log_scale: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE: CE over rows plus CE over columns of cos(v_m, v_r) * exp(log_scale).

    Pair i is (v_m[i], v_r[i]). Each direction is averaged over the batch; the
    two directions are summed.
    """
    if v_m.shape[0] < 2 or v_m.shape != v_r.shape:
        raise ValueError(f'clip_loss needs k >= 2 matched pairs, got {tuple(v_m.shape)} and {tuple(v_r.shape)}')
    logits = _unit(v_m, 'v_m') @ _unit(v_r, 'v_r').T * log_scale.exp()
    targets = torch.arange(v_m.shape[0], device=v_m.device)
    return F.cross_entropy(logits, targets) + F.cross_entropy(logits.T, targets)


def patient_discrimination_loss(u: torch.Tensor, study_index: torch.Tensor, log_temperature: torch.Tensor,
                                suppress_self: bool = True, self_fill: float = -10.0) -> torch.Tensor:
    """Pull together sequence embeddings of the same study.

    For sequence j of study i the score is the softmax mass (over every
    sequence in the batch) that falls on sequences of study i; the loss is
    -log of that mass, averaged within each study and then over studies. With
    ``suppress_self`` the self-similarity logit is replaced by ``self_fill``
    before the softmax; otherwise the raw formula (self included) is used.
    """
    z = _unit(u, 'u')
    logits = z @ z.T / log_temperature.exp()
    if suppress_self:
        eye = torch.eye(len(z), dtype=torch.bool, device=z.device)
        logits = logits.masked_fill(eye, self_fill)
    same = study_index[:, None] == study_index[None, :]
    neg_inf = torch.finfo(logits.dtype).min
    per_sequence = torch.logsumexp(logits, dim=1) - torch.logsumexp(logits.masked_fill(~same, neg_inf), dim=1)

    studies, inverse, counts = torch.unique(study_index, return_inverse=True, return_counts=True)
    per_study = torch.zeros(len(studies), dtype=logits.dtype, device=logits.device)
    per_study = per_study.index_add(0, inverse, per_sequence) / counts.to(logits.dtype)
    return per_study.mean()


def combined_loss(clip: torch.Tensor, patdis: torch.Tensor, weight: float) -> torch.Tensor:
    if weight < 0:
        raise ValueError(f'patient-discrimination weight must be >= 0, got {weight}')
    if weight == 0:
        return clip
    return clip + weight * patdis
