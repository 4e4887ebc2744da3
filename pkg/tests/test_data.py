import numpy as np
import pytest

from mdmlp import data as D
from mdmlp.data import (
    DatasetSplit, LabeledImage, augment, batches, color_jitter, encode_record, epoch_order, hflip, load_cifar10,
    load_cifar10_file, load_cifar100, synthetic_dataset,
)
from mdmlp.errors import ConfigError, DataError


def write_cifar10(path, labels, rng):
    pixels = rng.integers(0, 256, size=(len(labels), 3072), dtype=np.uint8)
    rows = np.concatenate([np.asarray(labels, np.uint8)[:, None], pixels], axis=1)
    path.write_bytes(rows.tobytes())
    return pixels


@pytest.fixture(scope="session")
def cifar10_test_file(tmp_path_factory):
    """A full-size test batch: 10,000 records, 1,000 per class, in shuffled order."""
    rng = np.random.default_rng(10)
    labels = rng.permutation(np.repeat(np.arange(10), 1000))
    path = tmp_path_factory.mktemp("cifar") / "test_batch.bin"
    pixels = write_cifar10(path, labels, rng)
    return path, labels, pixels


class TestCifar10:
    def test_full_test_batch(self, cifar10_test_file):
        path, labels, pixels = cifar10_test_file
        split = load_cifar10_file(path)
        assert split.images.shape == (10_000, 3, 32, 32)
        assert split.images.dtype == np.float32
        np.testing.assert_array_equal(np.bincount(split.labels, minlength=10), [1000] * 10)
        np.testing.assert_array_equal(split.labels, labels)
        # channel-planar, row-major inside each plane
        np.testing.assert_array_equal(split.images[17, 1, 2, 5] * 255, pixels[17, 1024 + 2 * 32 + 5])

    def test_record_roundtrip_is_byte_exact(self, cifar10_test_file):
        path, _, _ = cifar10_test_file
        raw = path.read_bytes()
        split = load_cifar10_file(path)
        for i in (0, 1, 4321, 9999):
            rec = encode_record(split.images[i], int(split.labels[i]))
            assert rec == raw[i * 3073:(i + 1) * 3073]

    def test_decode_extremes(self, tmp_path, monkeypatch):
        monkeypatch.setattr(D, "CIFAR10_BATCH_RECORDS", 2)
        rows = np.zeros((2, 3073), np.uint8)
        rows[0, 1:] = 255
        rows[1, 0] = 9
        (tmp_path / "b.bin").write_bytes(rows.tobytes())
        split = load_cifar10_file(tmp_path / "b.bin")
        assert np.all(split.images[0] == 1.0)
        assert np.all(split.images[1] == 0.0)
        assert split.labels.tolist() == [0, 9]

    def test_truncated_file(self, tmp_path, monkeypatch):
        monkeypatch.setattr(D, "CIFAR10_BATCH_RECORDS", None)
        (tmp_path / "b.bin").write_bytes(bytes(3073 * 2 - 5))
        with pytest.raises(DataError, match="b.bin.*multiple"):
            load_cifar10_file(tmp_path / "b.bin")

    def test_wrong_record_count(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(bytes(3073 * 3))
        with pytest.raises(DataError, match="expected 30730000"):
            load_cifar10_file(tmp_path / "b.bin")

    def test_label_out_of_range(self, tmp_path, monkeypatch):
        monkeypatch.setattr(D, "CIFAR10_BATCH_RECORDS", 3)
        rows = np.zeros((3, 3073), np.uint8)
        rows[2, 0] = 10
        (tmp_path / "b.bin").write_bytes(rows.tobytes())
        with pytest.raises(DataError, match="record 2 .byte offset 6146"):
            load_cifar10_file(tmp_path / "b.bin")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            load_cifar10(tmp_path)

    def test_full_release_layout(self, tmp_path, monkeypatch):
        monkeypatch.setattr(D, "CIFAR10_BATCH_RECORDS", 20)
        rng = np.random.default_rng(3)
        root = tmp_path / "cifar-10-batches-bin"
        root.mkdir()
        for name in D.CIFAR10_TRAIN_FILES + (D.CIFAR10_TEST_FILE,):
            write_cifar10(root / name, np.arange(20) % 10, rng)
        train, test = load_cifar10(tmp_path)
        assert len(train) == 100 and len(test) == 20
        assert train.num_classes == test.num_classes == 10

    def test_encode_rejects_bad_shape(self):
        with pytest.raises(ConfigError):
            encode_record(np.zeros((3, 16, 16)), 0)


def test_cifar100_fixture(tmp_path, monkeypatch):
    monkeypatch.setattr(D, "CIFAR100_SPLITS", (("train.bin", 6, "train"), ("test.bin", 4, "test")))
    rng = np.random.default_rng(0)
    for name, n in (("train.bin", 6), ("test.bin", 4)):
        rows = rng.integers(0, 256, size=(n, 3074), dtype=np.uint8)
        rows[:, 0] = np.arange(n) % 20
        rows[:, 1] = np.arange(n) * 11
        (tmp_path / name).write_bytes(rows.tobytes())
    train, test = load_cifar100(tmp_path)
    assert train.labels.tolist() == [0, 11, 22, 33, 44, 55]
    assert train.num_classes == 100
    _, coarse = load_cifar100(tmp_path, "coarse")
    assert coarse.labels.tolist() == [0, 1, 2, 3] and coarse.num_classes == 20


class TestSynthetic:
    def test_deterministic(self):
        a = synthetic_dataset(4, 40, 4, 16, 16)
        b = synthetic_dataset(4, 40, 4, 16, 16)
        np.testing.assert_array_equal(a.images, b.images)
        assert not np.array_equal(a.images, synthetic_dataset(5, 40, 4, 16, 16).images)

    def test_round_robin_labels(self):
        s = synthetic_dataset(0, 10, 4, 16, 16)
        assert s.labels.tolist() == [0, 1, 2, 3, 0, 1, 2, 3, 0, 1]

    def test_square_marks_class(self):
        s = synthetic_dataset(0, 8, 4, 16, 16)
        # class k puts its square at grid cell k; noise stays below 0.5
        assert np.all(s.images[1, :, 0:4, 4:8] == 1.0)
        assert s.images[1, :, 0:4, 0:4].max() < 0.5
        assert 0.0 <= s.images.min() and s.images.max() <= 1.0

    def test_too_many_classes(self):
        with pytest.raises(ConfigError):
            synthetic_dataset(0, 100, 50, 8, 8)


def img(rng):
    return LabeledImage(rng.random((3, 6, 5)).astype(np.float32), 7)


class TestAugment:
    def test_hflip_involution(self, rng):
        x = rng.random((3, 4, 5))
        np.testing.assert_array_equal(hflip(hflip(x)), x)
        np.testing.assert_array_equal(hflip(x)[:, :, 0], x[:, :, -1])

    def test_neutral_jitter(self, rng):
        x = rng.random((3, 4, 4)).astype(np.float32)
        np.testing.assert_allclose(color_jitter(x, 1.0, 1.0, 1.0), x, atol=1e-7)

    def test_brightness(self):
        x = np.full((3, 2, 2), 0.8, np.float32)
        np.testing.assert_allclose(color_jitter(x, 0.5, 1.0, 1.0), 0.4, rtol=1e-6)

    def test_clamped(self):
        x = np.full((3, 2, 2), 0.8, np.float32)
        assert color_jitter(x, 1.4, 1.4, 1.4).max() <= 1.0

    def test_gray_image_ignores_saturation(self):
        x = np.full((3, 2, 2), 0.3)
        x[:, 0, 0] = 0.6
        np.testing.assert_allclose(color_jitter(x, 1.0, 1.0, 0.6), x, atol=1e-12)

    def test_preserves_label_shape_range(self, rng):
        for seed in range(20):
            out = augment(img(rng), np.random.default_rng(seed))
            assert out.label == 7
            assert out.pixels.shape == (3, 6, 5) and out.pixels.dtype == np.float32
            assert out.pixels.min() >= 0 and out.pixels.max() <= 1

    def test_hflip_only_flips_about_half(self, rng):
        x = img(rng)
        flips = sum(not np.array_equal(augment(x, np.random.default_rng(s), ("hflip",)).pixels, x.pixels)
                    for s in range(400))
        assert 160 <= flips <= 240

    def test_unknown_flag(self, rng):
        with pytest.raises(ConfigError):
            augment(img(rng), rng, ("rotate",))


class TestBatches:
    def split(self, n=10):
        return DatasetSplit(np.arange(n, dtype=np.float32).reshape(n, 1, 1, 1) * np.ones((1, 3, 2, 2), np.float32),
                            np.arange(n) % 3, 3)

    def test_sizes(self):
        sizes = [len(y) for _, y in batches(self.split(), 4, 0, 0)]
        assert sizes == [4, 4, 2]

    def test_covers_every_example_once(self):
        seen = np.concatenate([x[:, 0, 0, 0] for x, _ in batches(self.split(), 3, 1, 2)])
        assert sorted(seen.tolist()) == list(range(10))

    def test_labels_follow_images(self):
        for x, y in batches(self.split(), 4, 5, 1):
            np.testing.assert_array_equal(x[:, 0, 0, 0].astype(int) % 3, y)

    def test_deterministic_and_epoch_dependent(self):
        a = [x for x, _ in batches(self.split(), 4, 9, 0, flags=("hflip", "color_jitter"))]
        b = [x for x, _ in batches(self.split(), 4, 9, 0, flags=("hflip", "color_jitter"))]
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)
        assert not np.array_equal(epoch_order(100, 9, 0), epoch_order(100, 9, 1))

    def test_unshuffled(self):
        x, _ = next(batches(self.split(), 10, 0, 0, shuffle=False))
        assert x[:, 0, 0, 0].tolist() == list(range(10))

    def test_does_not_mutate_source(self):
        s = self.split()
        before = s.images.copy()
        for _ in batches(s, 4, 0, 0, flags=("color_jitter",)):
            pass
        np.testing.assert_array_equal(s.images, before)

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            next(batches(self.split(), 0, 0, 0))
