import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pydantic

from config.settings import LOG_LEVEL, LOG_FORMAT
from schemas.models import LabeledDataset, Template
from utils.errors import DimensionMismatchError, NormViolationError, StorageError, StoreFormatError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("template_store")

TEMPLATE_MAGIC = b"CTPL"
DATASET_MAGIC = b"CDAT"
FORMAT_VERSION = 1
# magic, version u16, dim u32, count u64
TEMPLATE_HEADER = struct.Struct("<4sHIQ")
# magic, version u16, dim u32, count u64, seed u64
DATASET_HEADER = struct.Struct("<4sHIQQ")
ID_LENGTH = struct.Struct("<I")
NO_SEED = 2**64 - 1
STORED_NORM_TOL = 1e-5


def write_atomic(path: str | Path, chunks: Iterable[bytes]) -> int:
    """Write chunks to a temp file beside path, then rename over it."""
    path = Path(path)
    written = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False) as handle:
            temp_path = Path(handle.name)
            try:
                for chunk in chunks:
                    handle.write(chunk)
                    written += len(chunk)
                handle.flush()
                os.fsync(handle.fileno())
            except BaseException:
                handle.close()
                temp_path.unlink(missing_ok=True)
                raise
        os.replace(temp_path, path)
    except OSError as e:
        raise StorageError(f"failed to write {path}: {e}") from e
    return written


def read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"failed to read {path}: {e}") from e


def _encode_ids(ids: Sequence[str]) -> bytes:
    parts = []
    for identity in ids:
        encoded = identity.encode("utf-8")
        parts.append(ID_LENGTH.pack(len(encoded)))
        parts.append(encoded)
    return b"".join(parts)


def _decode_ids(data: bytes, offset: int, count: int, path) -> Tuple[List[str], int]:
    ids = []
    for index in range(count):
        if offset + ID_LENGTH.size > len(data):
            raise StoreFormatError(f"{path}: id table truncated at entry {index}")
        (length,) = ID_LENGTH.unpack_from(data, offset)
        offset += ID_LENGTH.size
        if offset + length > len(data):
            raise StoreFormatError(f"{path}: id table truncated at entry {index}")
        try:
            ids.append(data[offset:offset + length].decode("utf-8"))
        except UnicodeDecodeError as e:
            raise StoreFormatError(f"{path}: id {index} is not valid UTF-8") from e
        offset += length
    return ids, offset


def _payload(data: bytes, offset: int, count: int, dim: int, dtype: str, path) -> np.ndarray:
    expected = count * dim * np.dtype(dtype).itemsize
    actual = len(data) - offset
    if actual != expected:
        raise StoreFormatError(f"{path}: payload is {actual} bytes, header declares {expected}")
    if expected == 0:
        return np.empty((count, dim), dtype=dtype)
    return np.frombuffer(data, dtype=dtype, count=count * dim, offset=offset).reshape(count, dim)


def _check_header(magic: bytes, version: int, expected_magic: bytes, path) -> None:
    if magic != expected_magic:
        raise StoreFormatError(f"{path}: bad magic {magic!r}, expected {expected_magic!r}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"{path}: version {version} is not supported (expected {FORMAT_VERSION})")


def write_templates(path: str | Path, templates: Sequence[Template], dim: Optional[int] = None) -> int:
    """Write templates as float32 rows; returns the byte count written."""
    if templates:
        dim = templates[0].dim
        for template in templates:
            if template.dim != dim:
                raise DimensionMismatchError(
                    f"template {template.id!r} has dimension {template.dim}, file dimension is {dim}"
                )
        payload = np.stack([t.features for t in templates]).astype("<f4").tobytes()
    else:
        dim = dim or 0
        payload = b""

    header = TEMPLATE_HEADER.pack(TEMPLATE_MAGIC, FORMAT_VERSION, dim, len(templates))
    written = write_atomic(path, [header, _encode_ids([t.id for t in templates]), payload])
    logger.info(f"Templates written - path: {path}, count: {len(templates)}, dim: {dim}, bytes: {written}")
    return written


def read_templates(path: str | Path) -> List[Template]:
    """Read and validate a template file, including the unit norm of every row."""
    data = read_bytes(path)
    if len(data) < TEMPLATE_HEADER.size:
        raise StoreFormatError(f"{path}: file is shorter than the header")
    magic, version, dim, count = TEMPLATE_HEADER.unpack_from(data)
    _check_header(magic, version, TEMPLATE_MAGIC, path)
    if count and dim == 0:
        raise StoreFormatError(f"{path}: {count} templates declared with dimension 0")

    ids, offset = _decode_ids(data, TEMPLATE_HEADER.size, count, path)
    rows = _payload(data, offset, count, dim, "<f4", path)

    if count:
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > STORED_NORM_TOL)
        if bad.size:
            raise NormViolationError(
                f"{path}: {bad.size} rows are not unit length (first: row {bad[0]}, norm {norms[bad[0]]:.8f})"
            )
    try:
        templates = [Template(id=identity, features=row) for identity, row in zip(ids, rows)]
    except pydantic.ValidationError as e:
        raise NormViolationError(f"{path}: {e}") from e

    logger.info(f"Templates read - path: {path}, count: {count}, dim: {dim}")
    return templates


def write_dataset(path: str | Path, data: LabeledDataset) -> int:
    """Write a labelled raw dataset as float64 rows."""
    seed = NO_SEED if data.seed is None else data.seed
    header = DATASET_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, data.dim_raw, data.n, seed)
    payload = data.samples.astype("<f8").tobytes()
    written = write_atomic(path, [header, _encode_ids(data.labels), payload])
    logger.info(f"Dataset written - path: {path}, samples: {data.n}, dim_raw: {data.dim_raw}, bytes: {written}")
    return written


def read_dataset(path: str | Path) -> LabeledDataset:
    data = read_bytes(path)
    if len(data) < DATASET_HEADER.size:
        raise StoreFormatError(f"{path}: file is shorter than the header")
    magic, version, dim, count, seed = DATASET_HEADER.unpack_from(data)
    _check_header(magic, version, DATASET_MAGIC, path)

    labels, offset = _decode_ids(data, DATASET_HEADER.size, count, path)
    samples = _payload(data, offset, count, dim, "<f8", path)
    try:
        dataset = LabeledDataset(samples=samples, labels=tuple(labels), seed=None if seed == NO_SEED else seed)
    except pydantic.ValidationError as e:
        raise StoreFormatError(f"{path}: {e}") from e
    logger.info(f"Dataset read - path: {path}, samples: {count}, dim_raw: {dim}")
    return dataset
