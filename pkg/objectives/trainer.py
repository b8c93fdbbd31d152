"""CLIP + patient-discrimination training loop."""
import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from evalmetrics.retrieval import grouped_retrieval
from hvit.checkpoint import save_checkpoint
from voltok.training import TrainingDivergedError
from .augment import TrainingExample, apply_augmentations
from .model import ClipModel, embed_examples
from .sampler import AbnormalUpsampler

logger = logging.getLogger(__name__)


@dataclass
class ClipTrainingResult:
    records: List[Dict] = field(default_factory=list)
    steps_to_target: Optional[int] = None
    checkpoints: List[str] = field(default_factory=list)

    @property
    def final(self) -> Dict:
        return self.records[-1] if self.records else {}

    @property
    def best_top1(self) -> float:
        return max((r['top1'] for r in self.records), default=0.0)


def warmup_cosine(warmup: int, total: int) -> Callable[[int], float]:
    """LR multiplier: linear ramp over ``warmup`` steps, then cosine decay to zero at ``total``."""

    def factor(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        progress = (step - warmup) / max(1, total - warmup)
        return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))

    return factor


def validation_retrieval(model: ClipModel, examples: Sequence[TrainingExample], group_size: int, seed: int,
                         use_summaries: bool = True) -> Dict[int, float]:
    emb = embed_examples(model, list(examples), use_summaries)
    result = grouped_retrieval(emb.v_m, emb.v_r, group_size=min(group_size, len(examples)), seed=seed, ks=(1, 5))
    return result.top


def train_clip(model: ClipModel, train: Sequence[TrainingExample], val: Sequence[TrainingExample], seed: int,
               checkpoint_dir: Optional[Path] = None, metric_log: Optional[Path] = None,
               steps: Optional[int] = None, show_progress: bool = False) -> ClipTrainingResult:
    """Train the CLIP model in place.

    Every ``eval_every`` steps the validation retrieval is measured and one
    metric record is written; the model state at that point becomes the
    last-good checkpoint. A non-finite loss aborts with that checkpoint.
    """
    cfg = model.cfg
    obj = cfg.objective
    steps = steps or obj.steps
    if len(train) < 2:
        raise ValueError('CLIP training needs at least two training studies')
    if len(val) < 2:
        raise ValueError('CLIP validation needs at least two studies')

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    sampler = AbnormalUpsampler([e.study_id for e in train], [e.abnormal for e in train],
                                obj.abnormal_upsample, seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=obj.learning_rate, weight_decay=obj.weight_decay)
    warmup = min(obj.warmup_steps, steps // 10)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, warmup_cosine(warmup, steps))
    result = ClipTrainingResult()
    last_good: Optional[str] = None
    last_good_state = None
    log_file = open(metric_log, 'a', encoding='utf-8') if metric_log else None

    try:
        running = {'clip': 0.0, 'patdis': 0.0, 'n': 0}
        for step in tqdm(range(1, steps + 1), desc='CLIP', disable=not show_progress):
            model.train()
            batch = [train[i] for i in sampler.draw_batch(obj.batch_size)]
            augmented = apply_augmentations(batch, obj.augmentation, rng, obj.use_summaries)
            out = model([a.inputs for a in augmented], [a.text for a in augmented])
            terms = model.losses(out)
            if not torch.isfinite(terms.total):
                if last_good_state is not None:
                    model.load_state_dict(last_good_state)
                raise TrainingDivergedError(step, last_good)

            optimizer.zero_grad()
            terms.total.backward()
            optimizer.step()
            scheduler.step()
            model.clamp_scale()
            running['clip'] += terms.clip.item()
            running['patdis'] += terms.patdis.item()
            running['n'] += 1

            if step % obj.eval_every and step != steps:
                continue
            top = validation_retrieval(model, val, cfg.eval.group_size, seed, obj.use_summaries)
            record = {
                'step': step,
                'L_CLIP': running['clip'] / running['n'],
                'L_patdis': running['patdis'] / running['n'],
                'tau': model.temperature,
                'tau_p': model.patdis_temperature,
                'top1': top[1],
                'top5': top[5],
            }
            running = {'clip': 0.0, 'patdis': 0.0, 'n': 0}
            result.records.append(record)
            if result.steps_to_target is None and record['top1'] >= obj.retrieval_target:
                result.steps_to_target = step
            if log_file:
                log_file.write(json.dumps(record) + '\n')
                log_file.flush()
            logger.info(f"step {step}: L_CLIP {record['L_CLIP']:.4f} L_patdis {record['L_patdis']:.4f} "
                        f"top1 {record['top1']:.3f} top5 {record['top5']:.3f}", extra={'fields': record})

            last_good_state = copy.deepcopy(model.state_dict())
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f'clip_step{step:06d}.pt'
                save_checkpoint(path, last_good_state, cfg.canonical_json(), {'step': step, 'record': record})
                last_good = str(path)
                result.checkpoints.append(last_good)
            else:
                last_good = f'in-memory step {step}'
    finally:
        if log_file:
            log_file.close()

    model.eval()
    return result
