"""Autoregressive report language model G."""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from config.experiment import TextConfig
from hvit.blocks import Transformer, init_weights
from .vocab import WordVocab

logger = logging.getLogger(__name__)


class ReportLM(nn.Module):
    def __init__(self, vocab_size: int, cfg: TextConfig):
        super().__init__()
        self.max_len = cfg.max_report_tokens
        self.dim = cfg.lm_dim
        self.tok_emb = nn.Embedding(vocab_size, cfg.lm_dim)
        self.pos_emb = nn.Parameter(torch.zeros(1, cfg.max_report_tokens, cfg.lm_dim))
        self.transformer = Transformer(cfg.lm_dim, cfg.lm_layers, cfg.lm_heads, cfg.lm_dim // cfg.lm_heads,
                                       4 * cfg.lm_dim)
        self.lm_head = nn.Linear(cfg.lm_dim, vocab_size)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.pos_emb, std=0.02)

    def hidden(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = self.tok_emb(ids) + self.pos_emb[:, :ids.shape[1]]
        return self.transformer(x, key_padding_mask=pad_mask, causal=True)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        return self.lm_head(self.hidden(ids, pad_mask))

    def features(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """Mean of hidden states over real tokens."""
        h = self.hidden(ids, pad_mask)
        keep = (~pad_mask).unsqueeze(-1).to(h.dtype)
        return (h * keep).sum(1) / keep.sum(1).clamp_min(1.0)

    @torch.no_grad()
    def next_token_probs(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """Distribution over the token after each prefix (rows sum to 1)."""
        return self.forward(ids, pad_mask).softmax(dim=-1)


@dataclass
class ReportEncoder:
    model: ReportLM
    vocab: WordVocab
    val_perplexity: List[float] = field(default_factory=list)

    def batch(self, texts: Sequence[str]):
        ids, pad = self.vocab.batch(texts, self.model.max_len)
        return torch.from_numpy(ids), torch.from_numpy(pad)


def _nll(model: ReportLM, ids: torch.Tensor, pad: torch.Tensor) -> torch.Tensor:
    logits = model(ids[:, :-1], pad[:, :-1])
    targets = ids[:, 1:].masked_fill(pad[:, 1:], -100)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100,
                           reduction='sum'), (~pad[:, 1:]).sum()


@torch.no_grad()
def perplexity(encoder: ReportEncoder, texts: Sequence[str], batch_size: int = 64) -> float:
    encoder.model.eval()
    total, count = 0.0, 0
    for start in range(0, len(texts), batch_size):
        ids, pad = encoder.batch(texts[start:start + batch_size])
        nll, n = _nll(encoder.model, ids, pad)
        total += nll.item()
        count += int(n)
    return math.exp(total / max(count, 1))


def pretrain_report_lm(train_texts: Sequence[str], val_texts: Sequence[str], cfg: TextConfig, seed: int,
                       show_progress: bool = False) -> ReportEncoder:
    """Next-token pretraining; validation perplexity is logged before and after each epoch."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    vocab = WordVocab.build(train_texts)
    encoder = ReportEncoder(model=ReportLM(len(vocab), cfg), vocab=vocab)
    optimizer = torch.optim.AdamW(encoder.model.parameters(), lr=cfg.lm_learning_rate)
    encoder.val_perplexity.append(perplexity(encoder, val_texts))

    texts = list(train_texts)
    for epoch in range(cfg.lm_epochs):
        encoder.model.train()
        order = rng.permutation(len(texts))
        for start in tqdm(range(0, len(texts), cfg.lm_batch_size), desc=f'report LM epoch {epoch}',
                          disable=not show_progress):
            ids, pad = encoder.batch([texts[i] for i in order[start:start + cfg.lm_batch_size]])
            nll, n = _nll(encoder.model, ids, pad)
            loss = nll / n.clamp_min(1)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        encoder.val_perplexity.append(perplexity(encoder, val_texts))
        logger.info(f'report LM epoch {epoch}: val perplexity {encoder.val_perplexity[-1]:.3f}',
                    extra={'fields': {'epoch': epoch, 'val_perplexity': encoder.val_perplexity[-1]}})
    encoder.model.eval()
    return encoder
