import csv
import io
import logging
from pathlib import Path
from typing import Dict, Mapping, Sequence

import numpy as np
import pydantic
from dotenv import dotenv_values

from config.settings import LOG_LEVEL, LOG_FORMAT
from schemas.models import CascadeModel, LdaProjection, StagePlan, StageStats
from store.template_store import FORMAT_VERSION, read_bytes, write_atomic
from utils.errors import StorageError, StoreFormatError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("model_store")

PROJECTION_MAGIC = "CPRJ"
HEADER_END = b"\nend\n"
META_PREFIX = "meta."


def _format_floats(values: Sequence[float]) -> str:
    # repr is the shortest string that parses back to the same double
    return ",".join(repr(float(v)) for v in values)


def _render(fields: Mapping[str, object]) -> str:
    return "".join(f"{key}={value}\n" for key, value in fields.items())


def _parse(text: str) -> Dict[str, str]:
    return {key: value or "" for key, value in dotenv_values(stream=io.StringIO(text), interpolate=False).items()}


def _require(fields: Dict[str, str], key: str, path) -> str:
    if key not in fields:
        raise StoreFormatError(f"{path}: missing field {key!r}")
    return fields[key]


def _ints(text: str, key: str, path) -> list:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as e:
        raise StoreFormatError(f"{path}: field {key!r} is not a list of integers") from e


def _floats(text: str, key: str, path) -> list:
    try:
        return [float(part) for part in text.split(",") if part]
    except ValueError as e:
        raise StoreFormatError(f"{path}: field {key!r} is not a list of numbers") from e


def _check_version(fields: Dict[str, str], path) -> None:
    version = _require(fields, "version", path)
    if version != str(FORMAT_VERSION):
        raise StoreFormatError(f"{path}: version {version} is not supported (expected {FORMAT_VERSION})")


def _meta(fields: Dict[str, str]) -> Dict[str, str]:
    return {key[len(META_PREFIX):]: value for key, value in fields.items() if key.startswith(META_PREFIX)}


def write_key_values(path: str | Path, fields: Mapping[str, object], title: str = "") -> int:
    """Atomically write KEY=value lines, optionally under a comment title."""
    text = (f"# {title}\n" if title else "") + _render(fields)
    return write_atomic(path, [text.encode("utf-8")])


def read_key_values(path: str | Path) -> Dict[str, str]:
    try:
        return _parse(read_bytes(path).decode("utf-8"))
    except UnicodeDecodeError as e:
        raise StoreFormatError(f"{path}: not a UTF-8 text file") from e


def write_model(path: str | Path, model: CascadeModel) -> CascadeModel:
    fields = {
        "version": FORMAT_VERSION,
        "d": model.d,
        "sn": model.sn,
        "boundaries": ",".join(str(m) for m in model.plan.boundaries),
        "thresholds": _format_floats(model.thresholds),
        "target_vrs": _format_floats(model.target_vrs),
        "train_count": model.train_count,
    }
    fields.update({f"{META_PREFIX}{key}": value for key, value in sorted(model.provenance.items())})
    write_key_values(path, fields, title="cascade model")
    logger.info(f"Model written - path: {path}, d: {model.d}, sn: {model.sn}, train_count: {model.train_count}")
    return model


def read_model(path: str | Path) -> CascadeModel:
    """Parse a model file and validate it against the CascadeModel invariants."""
    fields = read_key_values(path)
    _check_version(fields, path)

    boundaries = _ints(_require(fields, "boundaries", path), "boundaries", path)
    try:
        sn = int(_require(fields, "sn", path))
        d = int(_require(fields, "d", path))
        train_count = int(_require(fields, "train_count", path))
    except ValueError as e:
        raise StoreFormatError(f"{path}: malformed integer field") from e
    if sn != len(boundaries):
        raise StoreFormatError(f"{path}: sn is {sn} but {len(boundaries)} boundaries are listed")
    if not boundaries or d != boundaries[-1]:
        raise StoreFormatError(f"{path}: d ({d}) must equal the last boundary")

    try:
        model = CascadeModel(
            plan=StagePlan(boundaries=tuple(boundaries)),
            thresholds=tuple(_floats(_require(fields, "thresholds", path), "thresholds", path)),
            target_vrs=tuple(_floats(_require(fields, "target_vrs", path), "target_vrs", path)),
            train_count=train_count,
            provenance=_meta(fields),
        )
    except pydantic.ValidationError as e:
        raise StoreFormatError(f"{path}: {e}") from e
    logger.info(f"Model read - path: {path}, d: {model.d}, sn: {model.sn}")
    return model


def write_projection(path: str | Path, projection: LdaProjection) -> LdaProjection:
    """Text header, then mean and row-major basis as little-endian float64."""
    fields = {
        "version": FORMAT_VERSION,
        "dim_raw": projection.dim_raw,
        "d_out": projection.d_out,
        "eigenvalues": _format_floats(projection.eigenvalues),
    }
    fields.update({f"{META_PREFIX}{key}": value for key, value in sorted(projection.provenance.items())})
    header = f"{PROJECTION_MAGIC}\n{_render(fields)}".encode("utf-8")
    payload = [
        projection.mean.astype("<f8").tobytes(),
        np.ascontiguousarray(projection.basis).astype("<f8").tobytes(),
    ]
    written = write_atomic(path, [header, HEADER_END[1:], *payload])
    logger.info(f"Projection written - path: {path}, dim_raw: {projection.dim_raw}, d_out: {projection.d_out}, bytes: {written}")
    return projection


def read_projection(path: str | Path) -> LdaProjection:
    data = read_bytes(path)
    split = data.find(HEADER_END)
    if not data.startswith(PROJECTION_MAGIC.encode("ascii") + b"\n") or split < 0:
        raise StoreFormatError(f"{path}: not a projection file (bad magic or missing header end)")
    try:
        header = data[len(PROJECTION_MAGIC) + 1:split + 1].decode("utf-8")
    except UnicodeDecodeError as e:
        raise StoreFormatError(f"{path}: header is not UTF-8") from e
    fields = _parse(header)
    _check_version(fields, path)

    try:
        dim_raw = int(_require(fields, "dim_raw", path))
        d_out = int(_require(fields, "d_out", path))
    except ValueError as e:
        raise StoreFormatError(f"{path}: malformed integer field") from e
    eigenvalues = _floats(_require(fields, "eigenvalues", path), "eigenvalues", path)
    if len(eigenvalues) != d_out:
        raise StoreFormatError(f"{path}: d_out is {d_out} but {len(eigenvalues)} eigenvalues are listed")

    offset = split + len(HEADER_END)
    expected = (dim_raw + dim_raw * d_out) * 8
    if len(data) - offset != expected:
        raise StoreFormatError(f"{path}: payload is {len(data) - offset} bytes, header declares {expected}")
    values = np.frombuffer(data, dtype="<f8", offset=offset)
    try:
        projection = LdaProjection(
            mean=values[:dim_raw],
            basis=values[dim_raw:].reshape(dim_raw, d_out),
            eigenvalues=np.array(eigenvalues),
            provenance=_meta(fields),
        )
    except pydantic.ValidationError as e:
        raise StoreFormatError(f"{path}: {e}") from e
    logger.info(f"Projection read - path: {path}, dim_raw: {dim_raw}, d_out: {d_out}")
    return projection


def write_provenance(artifact: str | Path, fields: Mapping[str, object]) -> Path:
    """Sidecar <artifact>.meta for fixed-layout binary files."""
    sidecar = Path(f"{artifact}.meta")
    write_key_values(sidecar, {"version": FORMAT_VERSION, **fields}, title=f"provenance of {Path(artifact).name}")
    return sidecar


def read_provenance(artifact: str | Path) -> Dict[str, str]:
    sidecar = Path(f"{artifact}.meta")
    if not sidecar.exists():
        raise StorageError(f"no provenance sidecar for {artifact}")
    return read_key_values(sidecar)


def write_table(path: str | Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> int:
    """Tab-separated table with a header row."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return write_atomic(path, [buffer.getvalue().encode("utf-8")])


def write_profile(path: str | Path, profile: Sequence[StageStats]) -> int:
    header = list(StageStats.model_fields)
    rows = [[getattr(stats, name) for name in header] for stats in profile]
    written = write_table(path, header, rows)
    logger.info(f"Stage profile written - path: {path}, stages: {len(profile)}")
    return written
