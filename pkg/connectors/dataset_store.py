"""Dataset directory connector: JSONL manifest + per-study volume and report files."""
import json
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import numpy as np

from synthcohort.schema import (Finding, LabelVector, RawReport, SensitiveAttributes,
                                SequenceVolume, VolumetricStudy)

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = 'manifest.jsonl'


class ManifestSchemaError(ValueError):
    """Raised when a manifest was written by an incompatible schema version."""


class DatasetStore:
    """Read/write a cohort as a dataset directory.

    Layout::

        <root>/manifest.jsonl          one record per study
        <root>/volumes/<id>.npz        sequence voxels + canonical lesion masks
        <root>/reports/<id>.txt        report prose
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.manifest_path = self.root / MANIFEST_NAME
        self._handle = None

    def open_for_write(self) -> None:
        (self.root / 'volumes').mkdir(parents=True, exist_ok=True)
        (self.root / 'reports').mkdir(parents=True, exist_ok=True)
        self._handle = open(self.manifest_path, 'w', encoding='utf-8')

    def close(self) -> None:
        if self._handle:
            self._handle.close()
            self._handle = None

    def __enter__(self):
        self.open_for_write()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
        return False

    def append(self, study: VolumetricStudy, report_labels: Optional[LabelVector] = None) -> Dict:
        """Persist one study and append its manifest record.

        Args:
            study: Study to write.
            report_labels: Labels produced by the report labeler; may carry
                UNLABELED markers, which are written as-is.

        Returns:
            The manifest record.
        """
        if self._handle is None:
            raise RuntimeError('DatasetStore is not open for writing')
        volume_rel = f'volumes/{study.study_id}.npz'
        report_rel = f'reports/{study.study_id}.txt'

        arrays = {f'seq_{i}': seq.voxels for i, seq in enumerate(study.sequences)}
        arrays.update({f'mask_{label_id}': mask.astype(np.uint8) for label_id, mask in study.masks.items()})
        np.savez_compressed(self.root / volume_rel, **arrays)
        (self.root / report_rel).write_text(study.report.prose, encoding='utf-8')

        record = {
            'schema_version': MANIFEST_SCHEMA_VERSION,
            'study_id': study.study_id,
            'study_name': study.study_name,
            'split': study.split,
            'labels': list(study.labels.y),
            'report_labels': list(report_labels.y) if report_labels is not None else None,
            'attributes': study.attributes.as_dict(),
            'findings': [f.to_dict() for f in study.report.findings],
            'sequences': [{'seq_name': s.seq_name, 'kind': s.kind, 'plane': s.plane, 'key': f'seq_{i}'}
                          for i, s in enumerate(study.sequences)],
            'volume_path': volume_rel,
            'report_path': report_rel,
        }
        self._handle.write(json.dumps(record, sort_keys=True) + '\n')
        return record

    def write_cohort(self, studies: List[VolumetricStudy],
                     report_labels: Optional[Dict[str, LabelVector]] = None) -> Path:
        report_labels = report_labels or {}
        with self:
            for study in studies:
                self.append(study, report_labels.get(study.study_id))
        logger.info(f'✓ Wrote {len(studies)} studies to {self.root}')
        return self.manifest_path

    def records(self) -> Iterator[Dict]:
        """Yield manifest records, rejecting foreign schema versions."""
        if not self.manifest_path.exists():
            raise FileNotFoundError(f'No manifest at {self.manifest_path}')
        with open(self.manifest_path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                version = record.get('schema_version')
                if version != MANIFEST_SCHEMA_VERSION:
                    raise ManifestSchemaError(
                        f'{self.manifest_path}:{line_no} has schema_version {version}, '
                        f'expected {MANIFEST_SCHEMA_VERSION}')
                yield record

    def load_study(self, record: Dict) -> VolumetricStudy:
        with np.load(self.root / record['volume_path']) as arrays:
            sequences = [SequenceVolume(seq_name=s['seq_name'], kind=s['kind'], plane=s['plane'],
                                        voxels=arrays[s['key']].copy()) for s in record['sequences']]
            masks = {int(key.split('_', 1)[1]): arrays[key].astype(bool)
                     for key in arrays.files if key.startswith('mask_')}
        prose = (self.root / record['report_path']).read_text(encoding='utf-8')
        findings = tuple(Finding.from_dict(f) for f in record['findings'])
        return VolumetricStudy(
            study_id=record['study_id'],
            study_name=record['study_name'],
            sequences=sequences,
            report=RawReport(prose=prose, findings=findings),
            labels=LabelVector(tuple(record['labels'])),
            attributes=SensitiveAttributes(**record['attributes']),
            masks=masks,
            split=record['split'],
        )

    def read_cohort(self) -> List[VolumetricStudy]:
        studies = [self.load_study(record) for record in self.records()]
        logger.info(f'✓ Loaded {len(studies)} studies from {self.root}')
        return studies

    def report_labels(self) -> Dict[str, Optional[LabelVector]]:
        return {r['study_id']: LabelVector(tuple(r['report_labels'])) if r['report_labels'] is not None else None
                for r in self.records()}
