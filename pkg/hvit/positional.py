"""Sinusoidal 3D positions and the plane indicator."""
import numpy as np
import torch

PLANES = ('axial', 'coronal', 'sagittal')


def sinusoid_1d(values: torch.Tensor, dim: int) -> torch.Tensor:
    """Interleaved sin/cos code of shape (..., dim) for scalar positions."""
    half = dim // 2
    freqs = torch.exp(-np.log(10000.0) * torch.arange(half, dtype=torch.float32) * 2.0 / dim)
    angles = values.to(torch.float32).unsqueeze(-1) * freqs.to(values.device)
    out = torch.stack([angles.sin(), angles.cos()], dim=-1)
    return out.flatten(-2)


def sinusoid_3d(coords: torch.Tensor, dim_per_axis: int) -> torch.Tensor:
    """(..., 3) integer grid coordinates -> (..., 3 * dim_per_axis)."""
    return torch.cat([sinusoid_1d(coords[..., axis], dim_per_axis) for axis in range(3)], dim=-1)


def plane_one_hot(plane_ids: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.one_hot(plane_ids.long(), num_classes=len(PLANES)).to(torch.float32)


def token_features(latents: torch.Tensor, coords: torch.Tensor, plane_ids: torch.Tensor,
                   dim_per_axis: int) -> torch.Tensor:
    """Fixed concatenation order: latent | sinusoid | plane one-hot.

    ``plane_ids`` has one entry per sequence and is broadcast over its tokens.
    """
    pos = sinusoid_3d(coords, dim_per_axis)
    plane = plane_one_hot(plane_ids)[:, None, :].expand(-1, latents.shape[1], -1)
    return torch.cat([latents, pos, plane], dim=-1)
