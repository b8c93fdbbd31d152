"""PredictionRecord rows and their JSONL file format."""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class PredictionRecord:
    study_id: str
    logits: Tuple[float, ...]
    labels: Tuple[int, ...]
    attributes: Dict = field(default_factory=dict)
    split: str = 'test'
    task: str = 'diagnosis'

    def __post_init__(self):
        if not np.all(np.isfinite(self.logits)):
            raise ValueError(f'{self.study_id}: logits must be finite')
        if len(self.logits) != len(self.labels):
            raise ValueError(f'{self.study_id}: {len(self.logits)} logits but {len(self.labels)} labels')

    @property
    def scores(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-np.asarray(self.logits, dtype=np.float64)))


def records_to_arrays(records: Sequence[PredictionRecord]) -> Tuple[np.ndarray, np.ndarray]:
    """(N, L) sigmoid scores and (N, L) labels; UNLABELED entries stay -1."""
    if not records:
        raise ValueError('no prediction records')
    scores = np.stack([r.scores for r in records])
    labels = np.asarray([r.labels for r in records], dtype=np.int64)
    return scores, labels


def write_records(path: Path, records: Iterable[PredictionRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(asdict(record)) + '\n')
    return path


def read_records(path: Path) -> List[PredictionRecord]:
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if line.strip():
                data = json.loads(line)
                data['logits'] = tuple(data['logits'])
                data['labels'] = tuple(data['labels'])
                records.append(PredictionRecord(**data))
    return records
