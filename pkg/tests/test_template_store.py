import struct

import numpy as np
import pytest

from schemas.models import LabeledDataset
from store.template_store import (
    FORMAT_VERSION,
    ID_LENGTH,
    TEMPLATE_HEADER,
    TEMPLATE_MAGIC,
    read_dataset,
    read_templates,
    write_atomic,
    write_dataset,
    write_templates,
)
from utils.errors import DimensionMismatchError, NormViolationError, StorageError, StoreFormatError


def test_templates_survive_write_and_read(tmp_path, make_templates):
    templates = make_templates(25, 32)
    templates[3] = templates[3].model_copy(update={"id": "ünïcode-id"})
    path = tmp_path / "gallery.ctpl"
    written = write_templates(path, templates)
    assert written == path.stat().st_size
    assert read_templates(path) == templates


def test_empty_template_file_round_trips(tmp_path):
    path = tmp_path / "empty.ctpl"
    write_templates(path, [], dim=8)
    assert read_templates(path) == []


def test_write_rejects_mixed_dimensions(tmp_path, make_templates):
    with pytest.raises(DimensionMismatchError):
        write_templates(tmp_path / "mixed.ctpl", make_templates(2, 8) + make_templates(1, 4))


def _corrupt(path, transform):
    path.write_bytes(transform(path.read_bytes()))


@pytest.mark.parametrize(
    "transform",
    [
        lambda data: b"XXXX" + data[4:],
        lambda data: data[:4] + struct.pack("<H", FORMAT_VERSION + 1) + data[6:],
        lambda data: data[:-4],
        lambda data: data + b"\x00",
        lambda data: data[:10],
    ],
    ids=["magic", "version", "truncated", "trailing", "header"],
)
def test_corrupted_template_files_are_rejected(tmp_path, make_templates, transform):
    path = tmp_path / "bad.ctpl"
    write_templates(path, make_templates(3, 8))
    _corrupt(path, transform)
    with pytest.raises(StoreFormatError):
        read_templates(path)


def test_non_unit_rows_are_rejected(tmp_path):
    path = tmp_path / "scaled.ctpl"
    payload = np.array([2.0, 0.0], dtype="<f4").tobytes()
    path.write_bytes(TEMPLATE_HEADER.pack(TEMPLATE_MAGIC, FORMAT_VERSION, 2, 1) + ID_LENGTH.pack(1) + b"a" + payload)
    with pytest.raises(NormViolationError):
        read_templates(path)


def test_missing_file_is_a_storage_error(tmp_path):
    with pytest.raises(StorageError):
        read_templates(tmp_path / "missing.ctpl")


@pytest.mark.parametrize("seed", [None, 0, 2**64 - 2])
def test_datasets_survive_write_and_read(tmp_path, rng, seed):
    data = LabeledDataset(samples=rng.standard_normal((6, 5)), labels=("a", "a", "b", "b", "c", "c"), seed=seed)
    path = tmp_path / "train.cdat"
    write_dataset(path, data)
    assert read_dataset(path) == data


def test_dataset_reader_checks_magic(tmp_path, make_templates):
    path = tmp_path / "templates.ctpl"
    write_templates(path, make_templates(2, 4))
    with pytest.raises(StoreFormatError):
        read_dataset(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "nested" / "file.bin"
    assert write_atomic(path, [b"abc", b"def"]) == 6
    assert path.read_bytes() == b"abcdef"
    assert [p.name for p in path.parent.iterdir()] == ["file.bin"]


def test_payload_size_is_count_times_dim_times_four(tmp_path, make_templates):
    templates = make_templates(1000, 428)
    written = write_templates(tmp_path / "big.ctpl", templates)
    id_bytes = sum(ID_LENGTH.size + len(t.id.encode("utf-8")) for t in templates)
    assert written - TEMPLATE_HEADER.size - id_bytes == 1_712_000
