import math
import struct

import numpy as np
import pytest

from vclab.data import (BLOB_DIM, DataFormatError, Dataset, MissingDataError,
                        STANDARD_SPLIT_PAIRS, TaskView, _bilinear_matrix, load_cifar10_gray28,
                        load_mnist, make_mixed_sequence, make_permuted_tasks, make_split_tasks,
                        make_synthetic_blobs)
from vclab.numerics import make_rng


def write_idx_images(path, images):
    n, rows, cols = images.shape
    path.write_bytes(struct.pack(">iiii", 0x803, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">ii", 0x801, len(labels)) + bytes(labels))


def make_mnist_dir(tmp_path, n_train=12, n_test=6):
    rng = make_rng("idx")
    train = rng.integers(0, 256, (n_train, 28, 28)).astype(np.uint8)
    test = rng.integers(0, 256, (n_test, 28, 28)).astype(np.uint8)
    write_idx_images(tmp_path / "train-images-idx3-ubyte", train)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [i % 10 for i in range(n_train)])
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", test)
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", [i % 10 for i in range(n_test)])
    return train, test


class TestIdxLoader:
    def test_round_trip(self, tmp_path):
        raw_train, _ = make_mnist_dir(tmp_path, n_train=20, n_test=4)
        train, test = load_mnist(tmp_path)
        assert train.images.shape == (20, 784)
        assert test.images.shape == (4, 784)
        assert train.images.min() >= 0.0 and train.images.max() <= 1.0
        np.testing.assert_allclose(train.images[3], raw_train[3].reshape(-1) / 255.0)
        assert train.labels.dtype == np.int64

    def test_bad_magic(self, tmp_path):
        make_mnist_dir(tmp_path)
        bad = tmp_path / "train-images-idx3-ubyte"
        blob = bytearray(bad.read_bytes())
        blob[3] = 0x99
        bad.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="magic"):
            load_mnist(tmp_path)

    def test_truncated_reports_offset(self, tmp_path):
        make_mnist_dir(tmp_path)
        bad = tmp_path / "train-images-idx3-ubyte"
        blob = bad.read_bytes()
        bad.write_bytes(blob[:-100])
        with pytest.raises(DataFormatError, match=f"byte {len(blob) - 100}"):
            load_mnist(tmp_path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(MissingDataError):
            load_mnist(tmp_path)

    def test_gzip_accepted(self, tmp_path):
        import gzip
        make_mnist_dir(tmp_path)
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                     "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            raw = (tmp_path / name).read_bytes()
            (tmp_path / name).unlink()
            (tmp_path / (name + ".gz")).write_bytes(gzip.compress(raw))
        train, _ = load_mnist(tmp_path)
        assert train.images.shape[1] == 784


def make_cifar_dir(tmp_path, fill=None):
    rng = make_rng("cifar")
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        records = bytearray()
        for k in range(2):
            records.append(k % 10)
            if fill is None:
                records.extend(rng.integers(0, 256, 3072).astype(np.uint8).tobytes())
            else:
                records.extend(bytes([fill]) * 3072)
        (tmp_path / name).write_bytes(bytes(records))


class TestCifarLoader:
    def test_shapes_and_range(self, tmp_path):
        make_cifar_dir(tmp_path)
        train, test = load_cifar10_gray28(tmp_path)
        assert train.images.shape == (10, 784)  # 5 batches x 2 records
        assert test.images.shape == (2, 784)
        assert train.images.min() >= 0.0 and train.images.max() <= 1.0

    def test_uniform_gray_preserved(self, tmp_path):
        # luma weights sum to 1 and bilinear preserves constants, so a
        # uniform image with all channels c maps to c/255 everywhere.
        make_cifar_dir(tmp_path, fill=200)
        train, _ = load_cifar10_gray28(tmp_path)
        np.testing.assert_allclose(train.images, 200.0 / 255.0, atol=1e-12)

    def test_wrong_record_size(self, tmp_path):
        make_cifar_dir(tmp_path)
        path = tmp_path / "data_batch_3.bin"
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(DataFormatError, match="3073"):
            load_cifar10_gray28(tmp_path)

    def test_bilinear_matrix_rows_stochastic(self):
        m = _bilinear_matrix(32, 28)
        assert m.shape == (28, 32)
        np.testing.assert_allclose(m.sum(axis=1), np.ones(28), atol=1e-12)


def toy_dataset(n, split, seed=0):
    rng = make_rng("toy", split, seed)
    return Dataset(images=rng.random((n, 784)), labels=np.arange(n) % 10, split=split)


class TestSplitTasks:
    def test_custom_sequence(self):
        train, test = toy_dataset(100, "train"), toy_dataset(40, "test")
        pairs = [(0, 1), (8, 7), (9, 4), (6, 2), (3, 5)]
        tasks = make_split_tasks(train, test, pairs)
        assert len(tasks) == 5
        assert [t.head_index for t in tasks] == [0, 1, 2, 3, 4]
        assert tasks[1].label_map == {8: 0, 7: 1}
        assert all(t.chance_accuracy == 0.5 for t in tasks)
        # each task's view contains only the two chosen digit classes
        for task, (a, b) in zip(tasks, pairs):
            original = train.labels[task.train.rows]
            assert set(np.unique(original)) == {a, b}
            x, y = task.train.arrays()
            assert set(np.unique(y)) <= {0, 1}
            assert np.array_equal(y, (original == b).astype(int))

    def test_pairwise_disjoint_labels(self):
        train, test = toy_dataset(100, "train"), toy_dataset(40, "test")
        tasks = make_split_tasks(train, test, STANDARD_SPLIT_PAIRS)
        seen = [set(np.unique(train.labels[t.train.rows])) for t in tasks]
        for i in range(len(seen)):
            for j in range(i + 1, len(seen)):
                assert not (seen[i] & seen[j])

    def test_missing_label_rejected(self):
        small = Dataset(images=np.zeros((4, 784)), labels=np.array([0, 0, 1, 1]), split="train")
        with pytest.raises(ValueError):
            make_split_tasks(small, small, [(0, 7)])


class TestPermutedTasks:
    def test_permutations_are_bijections(self):
        train, test = toy_dataset(50, "train"), toy_dataset(20, "test")
        tasks = make_permuted_tasks(train, test, 10, make_rng("perm", 1))
        assert len(tasks) == 10
        for task in tasks:
            assert sorted(task.input_permutation.tolist()) == list(range(784))
            assert task.head_index == 0
            assert task.chance_accuracy == 0.1

    def test_same_seed_same_permutations(self):
        train, test = toy_dataset(50, "train"), toy_dataset(20, "test")
        a = make_permuted_tasks(train, test, 3, make_rng("perm", 2))
        b = make_permuted_tasks(train, test, 3, make_rng("perm", 2))
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.input_permutation, tb.input_permutation)

    def test_permutations_pairwise_distinct(self):
        train, test = toy_dataset(50, "train"), toy_dataset(20, "test")
        tasks = make_permuted_tasks(train, test, 10, make_rng("perm", 3))
        perms = {tuple(t.input_permutation) for t in tasks}
        assert len(perms) == 10

    def test_view_applies_permutation(self):
        train, test = toy_dataset(50, "train"), toy_dataset(20, "test")
        (task,) = make_permuted_tasks(train, test, 1, make_rng("perm", 4))
        x, _ = task.train.take(np.array([5]))
        np.testing.assert_array_equal(x[0], train.images[5][task.input_permutation])

    def test_shared_label_distribution(self):
        train, test = toy_dataset(50, "train"), toy_dataset(20, "test")
        tasks = make_permuted_tasks(train, test, 4, make_rng("perm", 5))
        base = tasks[0].train.arrays()[1]
        for task in tasks[1:]:
            assert np.array_equal(task.train.arrays()[1], base)


class TestMixedSequence:
    def test_alternation_and_heads(self):
        mnist = (toy_dataset(100, "train", 1), toy_dataset(40, "test", 1))
        cifar = (toy_dataset(100, "train", 2), toy_dataset(40, "test", 2))
        tasks = make_mixed_sequence(mnist, cifar)
        assert len(tasks) == 10
        assert [t.name.split("-")[0] for t in tasks] == ["mnist", "cifar"] * 5
        assert tasks[0].name == "mnist-0/1"
        assert [t.head_index for t in tasks] == list(range(10))
        assert all(t.input_dim == 784 for t in tasks)


class TestSyntheticBlobs:
    def test_pixels_in_unit_range(self):
        task = make_synthetic_blobs(8.0, 0.3, 200, make_rng("b", 1))
        x, y = task.train.arrays()
        assert x.shape == (200, BLOB_DIM)
        assert x.min() >= 0.0 and x.max() <= 1.0
        assert set(np.unique(y)) == {0, 1}

    def test_separation_zero_is_chance(self):
        task = make_synthetic_blobs(0.0, 0.0, 2000, make_rng("b", 2))
        x, y = task.train.arrays()
        # projection onto the class-mean axis is the best linear guess
        direction = x[y == 1].mean(axis=0) - x[y == 0].mean(axis=0)
        score = x @ direction
        acc = max(((score > np.median(score)) == y).mean(),
                  ((score < np.median(score)) == y).mean())
        assert acc < 0.6

    def test_separation_ten_linearly_separable(self):
        task = make_synthetic_blobs(10.0, 0.0, 2000, make_rng("b", 3))
        x, y = task.train.arrays()
        direction = x[y == 1].mean(axis=0) - x[y == 0].mean(axis=0)
        midpoint = (x[y == 1] @ direction).mean() / 2 + (x[y == 0] @ direction).mean() / 2
        acc = ((x @ direction > midpoint) == y).mean()
        assert acc > 0.99

    def test_rotation_pi_flips_labels(self):
        base = make_synthetic_blobs(9.0, 0.0, 1000, make_rng("b", 4))
        flipped = make_synthetic_blobs(9.0, math.pi, 1000, make_rng("b", 5))
        xb, yb = base.train.arrays()
        xf, yf = flipped.train.arrays()
        direction = xb[yb == 1].mean(axis=0) - xb[yb == 0].mean(axis=0)
        # the flipped task's class-1 cluster sits on the class-0 side
        assert (xf[yf == 1] @ direction).mean() < (xf[yf == 0] @ direction).mean()

    def test_validation(self):
        with pytest.raises(ValueError):
            make_synthetic_blobs(5.0, 0.0, 2, make_rng("b", 6))
        with pytest.raises(ValueError):
            make_synthetic_blobs(-1.0, 0.0, 100, make_rng("b", 7))


class TestTaskView:
    def test_len_and_take(self):
        view = TaskView(images=np.arange(20.0).reshape(5, 4), rows=np.array([1, 3, 4]),
                        labels=np.array([0, 1, 0]))
        assert len(view) == 3
        x, y = view.take(np.array([0, 2]))
        np.testing.assert_array_equal(x, [[4.0, 5.0, 6.0, 7.0], [16.0, 17.0, 18.0, 19.0]])
        np.testing.assert_array_equal(y, [0, 0])
