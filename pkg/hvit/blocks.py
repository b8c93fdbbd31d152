"""Pre-norm transformer blocks with padding and causal masks."""
from typing import Optional

import torch
import torch.nn as nn
from einops import rearrange


class MLP(nn.Module):
    def __init__(self, emb_dim: int, hidden_dim: int, dropout: float = 0.0):
        super().__init__()
        self.layer_norm = nn.LayerNorm(emb_dim)
        self.fc1 = nn.Linear(emb_dim, hidden_dim)
        self.gelu = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, emb_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.layer_norm(x)
        x = self.fc1(x)
        x = self.gelu(x)
        x = self.dropout(x)
        x = self.fc2(x)
        x = self.dropout(x)
        return x


class MSA(nn.Module):
    """Multi-head self-attention.

    ``key_padding_mask`` is True at padded positions: padded keys receive no
    attention, and padded queries are zeroed so they never feed the residual
    stream with anything but their own input.
    """

    def __init__(self, dim: int, heads: int = 8, dim_head: int = 64, dropout: float = 0.0):
        super().__init__()
        inner_dim = dim_head * heads
        self.heads = heads
        self.scale = dim_head ** -0.5

        self.norm = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)
        self.to_qkv = nn.Linear(dim, inner_dim * 3, bias=False)
        self.to_out = nn.Sequential(nn.Linear(inner_dim, dim), nn.Dropout(dropout))

    def forward(self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None,
                causal: bool = False) -> torch.Tensor:
        x = self.norm(x)
        q, k, v = (rearrange(t, 'b n (h d) -> b h n d', h=self.heads) for t in self.to_qkv(x).chunk(3, dim=-1))
        dots = torch.matmul(q, k.transpose(-1, -2)) * self.scale

        neg = torch.finfo(dots.dtype).min
        if causal:
            n = x.shape[1]
            future = torch.ones(n, n, dtype=torch.bool, device=x.device).triu(1)
            dots = dots.masked_fill(future, neg)
        if key_padding_mask is not None:
            dots = dots.masked_fill(key_padding_mask[:, None, None, :], neg)

        attn = self.dropout(dots.softmax(dim=-1))
        out = rearrange(torch.matmul(attn, v), 'b h n d -> b n (h d)')
        out = self.to_out(out)
        if key_padding_mask is not None:
            out = out.masked_fill(key_padding_mask[:, :, None], 0.0)
        return out


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, dim_head: int, mlp_dim: int, dropout: float = 0.0):
        super().__init__()
        self.msa = MSA(dim, heads=heads, dim_head=dim_head, dropout=dropout)
        self.mlp = MLP(dim, hidden_dim=mlp_dim, dropout=dropout)

    def forward(self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None,
                causal: bool = False) -> torch.Tensor:
        x = self.msa(x, key_padding_mask, causal) + x
        x = self.mlp(x) + x
        return x


class Transformer(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int, dim_head: int, mlp_dim: int, dropout: float = 0.0):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.layers = nn.ModuleList(
            [TransformerBlock(dim=dim, heads=heads, dim_head=dim_head, mlp_dim=mlp_dim, dropout=dropout)
             for _ in range(depth)]
        )

    def forward(self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None,
                causal: bool = False) -> torch.Tensor:
        for block in self.layers:
            x = block(x, key_padding_mask, causal)
        return self.norm(x)


def init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, mean=0.0, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
