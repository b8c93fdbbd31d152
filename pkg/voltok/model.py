"""VQ-VAE over 3D volume patches."""
import hashlib
import io
from typing import Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange

from config.experiment import TokenizerConfig
from .codebook import Codebook, VectorQuantizer


class PatchEncoder(nn.Module):
    """Two 3D convolutions then a linear map to the latent.

    Any axis permutation of the configured patch shape has the same voxel count,
    so permuted patches go through the same linear layer.
    """

    def __init__(self, patch_voxels: int, hidden: int, latent_dim: int):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv3d(1, hidden, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv3d(hidden, hidden, kernel_size=3, padding=1),
            nn.GELU(),
        )
        self.proj = nn.Linear(hidden * patch_voxels, latent_dim)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        h = self.convs(patches.unsqueeze(1))
        return self.proj(rearrange(h, 'b c x y z -> b (c x y z)'))


class PatchDecoder(nn.Module):
    def __init__(self, patch_voxels: int, hidden: int, latent_dim: int):
        super().__init__()
        self.hidden = hidden
        self.proj = nn.Linear(latent_dim, hidden * patch_voxels)
        self.convs = nn.Sequential(
            nn.GELU(),
            nn.Conv3d(hidden, hidden, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv3d(hidden, 1, kernel_size=3, padding=1),
        )

    def forward(self, z: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
        x, y, zz = shape
        h = rearrange(self.proj(z), 'b (c x y z) -> b c x y z', c=self.hidden, x=x, y=y, z=zz)
        return self.convs(h).squeeze(1)


class VQTokenizer(nn.Module):
    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        px, py, pz = cfg.patch_dims
        voxels = px * py * pz
        self.patch_dims: Tuple[int, int, int] = tuple(cfg.patch_dims)
        self.encoder = PatchEncoder(voxels, cfg.hidden_channels, cfg.latent_dim)
        self.quantizer = VectorQuantizer(cfg.codebook_size, cfg.latent_dim, cfg.commitment_beta)
        self.decoder = PatchDecoder(voxels, cfg.hidden_channels, cfg.latent_dim)

    def encode(self, patches: torch.Tensor) -> torch.Tensor:
        return self.encoder(patches)

    def decode(self, z_q: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
        return self.decoder(z_q, shape)

    def forward(self, patches: torch.Tensor):
        z_e = self.encode(patches)
        z_q, indices, vq_loss = self.quantizer(z_e)
        recon = self.decode(z_q, patches.shape[1:])
        return recon, z_e, indices, vq_loss

    def codebook(self) -> Codebook:
        return self.quantizer.codebook()

    def checksum(self) -> str:
        """Content hash of all parameters; cache keys depend on it."""
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            if name.endswith('usage_count') or name.endswith('epoch_usage'):
                continue
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().numpy().astype('<f4').tobytes())
        return digest.hexdigest()

    @torch.no_grad()
    def encode_numpy(self, patches: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        self.eval()
        out = []
        for start in range(0, len(patches), batch_size):
            chunk = torch.from_numpy(np.ascontiguousarray(patches[start:start + batch_size], dtype=np.float32))
            out.append(self.encode(chunk).numpy())
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.quantizer.embedding_dim), np.float32)

    def save(self, path, cfg: TokenizerConfig) -> str:
        buffer = io.BytesIO()
        torch.save({'config': cfg.model_dump(mode='json'), 'state_dict': self.state_dict()}, buffer)
        with open(path, 'wb') as f:
            f.write(buffer.getvalue())
        return self.checksum()

    @classmethod
    def load(cls, path) -> 'VQTokenizer':
        payload = torch.load(path, map_location='cpu', weights_only=False)
        model = cls(TokenizerConfig.model_validate(payload['config']))
        model.load_state_dict(payload['state_dict'])
        model.eval()
        return model
