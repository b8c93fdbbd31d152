"""Checkpoint files: named parameter blocks, a config JSON header and an integrity checksum."""
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import torch

from connectors.artifact_store import ChecksumMismatchError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def state_checksum(state_dict: Mapping[str, torch.Tensor]) -> str:
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        tensor = state_dict[name].detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(path: Path, state_dict: Mapping[str, torch.Tensor], config_json: str,
                    extra: Dict[str, Any] = None) -> str:
    checksum = state_checksum(state_dict)
    payload = {
        'format_version': FORMAT_VERSION,
        'config': config_json,
        'state_dict': dict(state_dict),
        'checksum': checksum,
        'extra': extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return checksum


def load_checkpoint(path: Path) -> Tuple[Dict[str, torch.Tensor], str, Dict[str, Any]]:
    """Return (state_dict, config_json, extra); raise if the parameters fail the checksum."""
    payload = torch.load(path, map_location='cpu', weights_only=False)
    if payload.get('format_version') != FORMAT_VERSION:
        raise ChecksumMismatchError(f'{path}: unsupported checkpoint format {payload.get("format_version")}')
    actual = state_checksum(payload['state_dict'])
    if actual != payload['checksum']:
        raise ChecksumMismatchError(f'{path}: parameter checksum {actual[:12]} != header {payload["checksum"][:12]}')
    return payload['state_dict'], payload['config'], payload.get('extra', {})
