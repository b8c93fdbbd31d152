"""Run directory layout, file checksums and the stage ledger."""
import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)

RUN_SUBDIRS = ('checkpoints', 'caches', 'metrics', 'plots')


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact is absent; ``stage`` names the stage that produces it."""

    def __init__(self, artifact: str, stage: str):
        self.artifact = artifact
        self.stage = stage
        super().__init__(f"missing artifact '{artifact}': run stage '{stage}' first")


class ChecksumMismatchError(ValueError):
    """A stored artifact no longer matches the checksum recorded for it."""


def file_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def bytes_checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


class StageLedger:
    """Track completed stages so identical re-runs become no-ops.

    Each entry records the stage, the hash of its inputs and the checksum of
    every output it wrote.
    """

    def __init__(self, log_file: Path):
        self.log_file = Path(log_file)
        self.load_log()

    def load_log(self):
        if self.log_file.exists():
            try:
                with open(self.log_file, 'r') as f:
                    self.entries = json.load(f)
                logger.info(f'Loaded {len(self.entries)} stage records')
            except (OSError, json.JSONDecodeError) as e:
                logger.error(f'Error loading ledger {self.log_file}: {e}')
                self.entries = []
        else:
            self.entries = []

    def save_log(self):
        self.log_file.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_file, 'w') as f:
            json.dump(self.entries, f, indent=2)

    @staticmethod
    def create_hash(stage: str, inputs: Dict[str, str]) -> str:
        key = json.dumps({'stage': stage, 'inputs': inputs}, sort_keys=True)
        return hashlib.sha256(key.encode()).hexdigest()

    def last(self, stage: str) -> Optional[Dict]:
        for entry in reversed(self.entries):
            if entry['stage'] == stage:
                return entry
        return None

    def should_run(self, stage: str, inputs: Dict[str, str], run_dir: Path) -> Tuple[bool, Optional[Dict]]:
        """Return (should_run, previous entry).

        A stage is skipped only when its last entry has the same input hash and
        every recorded output still exists with its recorded checksum.
        """
        entry = self.last(stage)
        if entry is None or entry['input_hash'] != self.create_hash(stage, inputs):
            return True, entry
        for rel, checksum in entry['outputs'].items():
            path = Path(run_dir) / rel
            if not path.exists() or file_checksum(path) != checksum:
                return True, entry
        return False, entry

    def log_completed(self, stage: str, inputs: Dict[str, str], outputs: Dict[str, str]):
        self.entries.append({
            'stage': stage,
            'input_hash': self.create_hash(stage, inputs),
            'inputs': inputs,
            'outputs': outputs,
            'completed_at': datetime.now().isoformat(),
        })
        self.save_log()

    def recent(self, limit: int = 20) -> List[Dict]:
        return self.entries[-limit:][::-1]


class RunStore:
    """``runs/<run-id>/{config.json, checkpoints, caches, metrics, plots, ledger.json}``."""

    def __init__(self, runs_dir: Path, run_id: str):
        self.run_id = run_id
        self.root = Path(runs_dir) / run_id
        for sub in RUN_SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self.ledger = StageLedger(self.root / 'ledger.json')

    def path(self, rel: str) -> Path:
        return self.root / rel

    def relative(self, path: Path) -> str:
        return str(Path(path).relative_to(self.root))

    def archive_config(self, canonical_json: str) -> Path:
        path = self.root / 'config.json'
        path.write_text(json.dumps(json.loads(canonical_json), indent=2, sort_keys=True), encoding='utf-8')
        return path

    def require(self, rel: str, producer: str) -> Path:
        """Resolve an upstream artifact or raise naming the stage that produces it."""
        path = self.root / rel
        if not path.exists():
            raise MissingArtifactError(rel, producer)
        return path

    def checksum(self, rel: str) -> str:
        return file_checksum(self.root / rel)

    def verify(self, rel: str, expected: str) -> None:
        actual = self.checksum(rel)
        if actual != expected:
            raise ChecksumMismatchError(f'{rel}: checksum {actual[:12]} != recorded {expected[:12]}')

    def write_json(self, rel: str, payload) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float), encoding='utf-8')
        return path

    def read_json(self, rel: str, producer: str):
        return json.loads(self.require(rel, producer).read_text(encoding='utf-8'))

    @staticmethod
    def list_runs(runs_dir: Path) -> List[Dict]:
        runs_dir = Path(runs_dir)
        if not runs_dir.exists():
            return []
        runs = []
        for child in sorted(runs_dir.iterdir()):
            if not (child / 'config.json').exists():
                continue
            ledger = StageLedger(child / 'ledger.json')
            runs.append({
                'run_id': child.name,
                'stages': sorted({e['stage'] for e in ledger.entries}),
                'last_completed': ledger.entries[-1]['completed_at'] if ledger.entries else None,
            })
        return runs
