"""Per-study lesion attributions: explain each positive class on the sequence that shows it best."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.experiment import ExplainConfig, LabelSpec
from synthcohort.schema import VolumetricStudy
from .lime import AttributionMap, LimeExplainer, SingularDesignError, multilabel_attribution
from .overlap import reaches_mask, sequence_mask, topk_overlap

logger = logging.getLogger(__name__)


@dataclass
class LesionAttribution:
    class_index: int
    seq_name: str
    attribution: AttributionMap
    hit: bool
    scorable: bool       # some kept token touches the lesion

    def as_row(self, study_id: str, class_name: str) -> dict:
        return {'study_id': study_id, 'class_name': class_name, 'seq_name': self.seq_name,
                'n_tokens': int(len(self.attribution.weights)), 'hit': self.hit, 'scorable': self.scorable}


def explanation_sequence(example, contrast: Dict[str, float]) -> str:
    """The sequence whose kind shows the class most strongly; ties keep acquisition order."""
    best = max(example.grids, key=lambda g: abs(contrast.get(g.kind, 0.0)))
    return best.seq_name


def explain_study(encoder, head, example, study: VolumetricStudy, classes: Sequence[int],
                  labels: Sequence[LabelSpec], cfg: ExplainConfig, seed: int,
                  explainer: Optional[LimeExplainer] = None) -> List[LesionAttribution]:
    """One shared mask set per sequence, one surrogate per class, each scored against its lesion mask."""
    by_sequence: Dict[str, List[int]] = {}
    for c in classes:
        by_sequence.setdefault(explanation_sequence(example, labels[c].contrast), []).append(c)

    results = []
    for seq_name, seq_classes in by_sequence.items():
        try:
            maps = multilabel_attribution(encoder, head, example, seq_name, seq_classes, cfg, seed, explainer)
        except (SingularDesignError, ValueError) as e:
            logger.warning(f'{example.study_id}/{seq_name}: attribution skipped: {e}')
            continue
        for c, attr in maps.items():
            mask = sequence_mask(study, seq_name, c)
            results.append(LesionAttribution(class_index=c, seq_name=seq_name, attribution=attr,
                                             hit=topk_overlap(attr, mask, cfg.top_k),
                                             scorable=reaches_mask(attr, mask)))
    return results


def hit_rates(attributions: Sequence[LesionAttribution]) -> Dict[str, float]:
    """Top-k hit rate over scorable attributions, and over all of them."""
    scored = [a.hit for a in attributions if a.scorable]
    return {
        'hit_rate': float(np.mean(scored)) if scored else float('nan'),
        'hit_rate_all': float(np.mean([a.hit for a in attributions])) if attributions else float('nan'),
        'n_unscorable': len(attributions) - len(scored),
    }
