"""Parameter accounting for ViT_seq + ViT_st."""
import torch

from config.experiment import EncoderConfig, TextConfig
from .encoder import SequenceEncoder, StudyEncoder

REFERENCE_PARAMETERS = 56_584_000


def block_parameter_count(dim: int, heads: int, head_dim: int, mlp_dim: int) -> int:
    """Parameters of one pre-norm block (attention without qkv bias, GELU MLP)."""
    inner = heads * head_dim
    attention = 2 * dim + dim * 3 * inner + inner * dim + dim
    mlp = 2 * dim + dim * mlp_dim + mlp_dim + mlp_dim * dim + dim
    return attention + mlp


def count_parameters(cfg: EncoderConfig, latent_dim: int, text_cfg: TextConfig) -> int:
    """Trainable parameters of the sequence and study transformers (name encoders excluded).

    Modules are built on the meta device so full-scale configs cost no memory.
    """
    with torch.device('meta'):
        seq = SequenceEncoder(cfg.sequence, latent_dim, text_cfg.name_dim, cfg.pos_dim_per_axis, cfg.readout)
        study = StudyEncoder(cfg.study, cfg.sequence.output_dim, text_cfg.name_dim, cfg.use_study_name)
    return sum(p.numel() for module in (seq, study) for p in module.parameters() if p.requires_grad)


def parameter_report(cfg: EncoderConfig, latent_dim: int, text_cfg: TextConfig) -> str:
    count = count_parameters(cfg, latent_dim, text_cfg)
    return (f'ViT_seq + ViT_st parameters: {count:,} ({count / 1e6:.3f}M) '
            f'vs reference {REFERENCE_PARAMETERS / 1e6:.3f}M')
