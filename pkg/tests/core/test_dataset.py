import struct

import numpy as np
import pytest

from bnrectify.core import dataset
from bnrectify.core.errors import FormatError, SemanticError, ShapeError


class TestBinaryFormat:

    def setup_method(self):
        rng = np.random.default_rng(0)
        self.data = dataset.RawDataset(
            rng.integers(0, 256, (5, 3, 4, 2), dtype=np.uint8),
            np.array([0, 1, 2, 300, 9], dtype=np.uint16),
        )

    def test_images_header_is_bit_exact(self, tmp_path):
        images_path, labels_path = dataset.write_dataset(tmp_path / "d.rset", self.data)
        raw = images_path.read_bytes()
        assert raw[:5] == b"RSET1"
        assert struct.unpack("<IIII", raw[5:21]) == (5, 3, 4, 2)
        assert raw[21:] == self.data.images.tobytes()
        labels = labels_path.read_bytes()
        assert labels[:5] == b"RLBL1"
        assert struct.unpack("<I", labels[5:9]) == (5,)
        assert struct.unpack("<5H", labels[9:]) == (0, 1, 2, 300, 9)

    def test_round_trip(self, tmp_path):
        dataset.write_dataset(tmp_path / "d.rset", self.data)
        loaded = dataset.read_dataset(tmp_path / "d.rset")
        assert np.array_equal(loaded.images, self.data.images)
        assert np.array_equal(loaded.labels, self.data.labels)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.rset"
        dataset.write_dataset(path, self.data)
        path.write_bytes(b"RSET2" + path.read_bytes()[5:])
        with pytest.raises(FormatError, match="bad magic"):
            dataset.read_images(path)

    def test_truncated_pixels(self, tmp_path):
        path = tmp_path / "d.rset"
        dataset.write_dataset(path, self.data)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(FormatError, match="pixel bytes"):
            dataset.read_images(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "d.rset"
        path.write_bytes(b"RSET1\x01")
        with pytest.raises(FormatError, match="truncated"):
            dataset.read_images(path)

    def test_count_mismatch_between_files(self, tmp_path):
        dataset.write_dataset(tmp_path / "d.rset", self.data)
        dataset.write_labels(tmp_path / "other.rlbl", np.zeros(4, dtype=np.uint16))
        with pytest.raises(FormatError, match="4 labels"):
            dataset.read_dataset(tmp_path / "d.rset", tmp_path / "other.rlbl")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="cannot read"):
            dataset.read_labels(tmp_path / "nope.rlbl")


class TestRawDataset:

    def test_labels_must_match_images(self):
        with pytest.raises(ShapeError):
            dataset.RawDataset(np.zeros((3, 1, 2, 2), dtype=np.uint8), np.zeros(2, np.uint16))

    def test_label_range(self):
        data = dataset.RawDataset(np.zeros((2, 1, 2, 2), np.uint8), np.array([0, 10], np.uint16))
        with pytest.raises(SemanticError, match="label 10"):
            data.check_labels(10)

    def test_pixels_are_scaled(self):
        data = dataset.RawDataset(np.full((1, 1, 1, 2), 255, np.uint8), np.zeros(1, np.uint16))
        assert data.pixels().tolist() == [[[[1.0, 1.0]]]]
        assert data.pixels().dtype == np.float32
        assert data.pixels([0]).flags.c_contiguous

    def test_quantization_rounds_to_nearest(self):
        pixels = np.array([0.0, 0.5 / 255, 1.2, -0.3])
        assert dataset.to_pixels_u8(pixels).tolist() == [0, 0, 255, 0]


class TestBuiltin:

    def test_synthesis_is_deterministic(self):
        a, b = dataset.synthesize(20, seed=4, size=8), dataset.synthesize(20, seed=4, size=8)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_seed_changes_images(self):
        a, b = dataset.synthesize(20, seed=4, size=8), dataset.synthesize(20, seed=5, size=8)
        assert not np.array_equal(a.images, b.images)

    def test_classes_are_balanced(self):
        data = dataset.synthesize(100, seed=0, size=8)
        assert np.bincount(data.labels, minlength=10).tolist() == [10] * 10
        assert data.images.shape == (100, 3, 8, 8)

    def test_make_builtin_writes_both_splits(self, tmp_path):
        paths = dataset.make_builtin(tmp_path, seed=1, train_count=20, test_count=10)
        train = dataset.read_dataset(paths["train"])
        test = dataset.read_dataset(paths["test"])
        assert (len(train), len(test)) == (20, 10)
        assert train.image_shape == (3, 32, 32)
        assert (tmp_path / "test.rlbl").exists()
