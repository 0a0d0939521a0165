import hashlib
import json
from pathlib import Path
from typing import Any, Dict

from utils.errors import StorageError


def config_digest(config: Dict[str, Any]) -> str:
    """Generate a stable digest of an effective configuration."""
    # Sorted keys so flag order never changes the digest
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def file_digest(path: str | Path) -> str:
    """Digest of a file's bytes, used to tie outputs to their inputs."""
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for block in iter(lambda: handle.read(1 << 20), b""):
                digest.update(block)
    except OSError as e:
        raise StorageError(f"failed to digest {path}: {e}") from e
    return digest.hexdigest()[:16]
