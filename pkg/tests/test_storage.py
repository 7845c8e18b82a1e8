"""Tests for the dataset file format and JSON helpers."""

import struct

import numpy as np
import pytest

from mmvp.errors import (
    BadMagicError,
    DatasetError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)
from mmvp.storage import HEADER, SequenceDataset, load_json, read_dataset, save_json, write_dataset
from mmvp.synth import generate_sequences


@pytest.fixture
def dataset():
    return generate_sequences(5, 3, 4, 32, 16, 2)


@pytest.fixture
def written(tmp_path, dataset):
    path = tmp_path / "seqs.mmvp"
    write_dataset(dataset, path)
    return path


class TestDatasetFile:
    def test_round_trip(self, written, dataset):
        assert read_dataset(written) == dataset

    def test_header_bytes(self, written):
        blob = written.read_bytes()
        assert HEADER.size == 29
        assert blob[:4] == b"MMVP"
        assert struct.unpack_from("<IIIIIIB", blob, 4) == (1, 3, 4, 32, 16, 1, 0)
        assert len(blob) == 29 + 3 * 4 * 32 * 16

    def test_payload_order(self, written, dataset):
        blob = written.read_bytes()
        payload = np.frombuffer(blob, dtype=np.uint8, offset=29)
        # [sequence][frame][channel][row][column]
        assert payload[(1 * 4 + 2) * 32 * 16 + 5 * 16 + 7] == dataset.frames[1, 2, 0, 5, 7]

    def _patch(self, path, offset, data):
        blob = bytearray(path.read_bytes())
        blob[offset:offset + len(data)] = data
        path.write_bytes(bytes(blob))

    def test_bad_magic(self, written):
        self._patch(written, 0, b"X")
        with pytest.raises(BadMagicError):
            read_dataset(written)

    def test_truncated(self, written):
        written.write_bytes(written.read_bytes()[:-1])
        with pytest.raises(TruncatedPayloadError):
            read_dataset(written)

    def test_short_header(self, tmp_path):
        path = tmp_path / "short.mmvp"
        path.write_bytes(b"MMVP\x01")
        with pytest.raises(TruncatedPayloadError):
            read_dataset(path)

    def test_unsupported_version(self, written):
        self._patch(written, 4, struct.pack("<I", 2))
        with pytest.raises(UnsupportedVersionError):
            read_dataset(written)

    def test_unsupported_dtype(self, written):
        self._patch(written, 28, b"\x01")
        with pytest.raises(UnsupportedDtypeError):
            read_dataset(written)

    def test_errors_are_distinct(self):
        kinds = [BadMagicError, TruncatedPayloadError, UnsupportedVersionError, UnsupportedDtypeError]
        assert len(set(kinds)) == 4
        assert all(issubclass(k, DatasetError) for k in kinds)


class TestSequenceDataset:
    def test_float_view(self, dataset):
        seq = dataset.sequence(0)
        assert seq.dtype == np.float32
        assert seq.shape == (4, 1, 32, 16)
        assert 0.0 <= seq.min() and seq.max() <= 1.0

    def test_from_float_quantises(self):
        ds = SequenceDataset.from_float(np.array([-0.5, 0.0, 0.5, 1.0, 2.0]).reshape(1, 5, 1, 1, 1))
        assert ds.frames.ravel().tolist() == [0, 0, 128, 255, 255]

    def test_rejects_bad_arrays(self):
        with pytest.raises(DatasetError):
            SequenceDataset(np.zeros((2, 3, 4), dtype=np.uint8))
        with pytest.raises(DatasetError):
            SequenceDataset(np.zeros((1, 1, 1, 2, 2), dtype=np.float32))


class TestJson:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "nested" / "doc.json"
        save_json(path, {"a": 1, "b": [1.5, None]})
        assert load_json(path) == {"a": 1, "b": [1.5, None]}

    def test_missing_returns_default(self, tmp_path):
        assert load_json(tmp_path / "none.json") == {}
        assert load_json(tmp_path / "none.json", []) == []

    def test_blank_file_returns_default(self, tmp_path):
        path = tmp_path / "blank.json"
        path.write_text("  \n", encoding="utf-8")
        assert load_json(path) == {}
        assert load_json(path, {"a": 1}) == {"a": 1}
