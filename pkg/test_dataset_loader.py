#!/usr/bin/env python3
"""Tests for dataset generation, IDX reading, downscaling and task splits."""

import numpy as np
import pytest
import requests

import dataset_loader
from conftest import write_idx
from dataset_loader import (
    BENCHMARK_TASKS, DatasetName, DatasetSpec, LabeledSample, SplitSpec, angle_features,
    area_weights, canonical_class, download_idx_files, downscale, downscale_to_8x8,
    find_benchmark_task, generate_bars_and_stripes, idx_paths, load_idx_images, load_samples,
    load_task, make_task, read_idx_arrays, save_samples,
)
from errors import DataFormatError, DataIOError, DatasetError


def area_oracle(image, target):
    """Block mean on a 2x supersampled grid, which makes 28 -> 8 bins whole pixels."""
    fine = np.kron(np.asarray(image, dtype=float), np.ones((2, 2)))
    block = fine.shape[0] // target
    small = fine.reshape(target, block, target, block).mean(axis=(1, 3))
    return small / small.max() if small.max() > 0 else small


# Bars & Stripes ---------------------------------------------------------------

@pytest.mark.parametrize("side,count", [(2, 4), (3, 12), (4, 28)])
def test_bars_and_stripes_counts(side, count):
    samples = generate_bars_and_stripes(side)
    assert len(samples) == count
    assert [s.id for s in samples] == list(range(count))


def test_stripes_are_transposed_bars():
    samples = generate_bars_and_stripes(4)
    bars = {tuple(s.pixels.reshape(4, 4).T.reshape(-1)) for s in samples if s.source_class == "bars"}
    stripes = {tuple(s.pixels) for s in samples if s.source_class == "stripes"}
    assert bars == stripes


def test_bars_fill_whole_columns():
    for sample in generate_bars_and_stripes(3):
        image = sample.pixels.reshape(3, 3)
        if sample.source_class == "bars":
            assert sample.label == 1 and np.all(image == image[0])
        else:
            assert sample.label == -1 and np.all(image.T == image[:, 0])
        assert 0 < image.sum() < 9


def test_angle_features_of_a_bar():
    bar = next(s for s in generate_bars_and_stripes(2) if s.source_class == "bars")
    np.testing.assert_allclose(angle_features(bar.pixels, 2), np.pi * np.array([0.5, 0.5, 0.0, 1.0]))


def test_side_too_small():
    with pytest.raises(DatasetError):
        generate_bars_and_stripes(1)


# IDX files ----------------------------------------------------------------------

def test_read_idx_scales_pixels(tmp_path):
    images = np.zeros((2, 2, 2), dtype=np.uint8)
    images[0, 0, 0] = 255
    images[1, 1, 1] = 51
    samples = load_idx_images(*write_idx(tmp_path, images, [0, 1]))
    assert samples[0].pixels[0] == 1.0
    assert samples[1].pixels[3] == pytest.approx(0.2)
    assert [s.source_class for s in samples] == ["0", "1"]
    assert all(s.label is None for s in samples)


def test_read_gzipped_idx(tmp_path):
    images = np.full((3, 2, 2), 128, dtype=np.uint8)
    loaded, labels = read_idx_arrays(*write_idx(tmp_path, images, [4, 5, 6], gz=True))
    assert loaded.shape == (3, 2, 2)
    assert labels.tolist() == [4, 5, 6]


def test_keep_classes_filter(tmp_path):
    images = np.ones((4, 2, 2), dtype=np.uint8)
    samples = load_idx_images(*write_idx(tmp_path, images, [3, 7, 3, 1]), keep_classes=["3"])
    assert [s.id for s in samples] == [0, 2]


def test_fashion_class_names(tmp_path):
    images = np.ones((2, 2, 2), dtype=np.uint8)
    samples = load_idx_images(*write_idx(tmp_path, images, [9, 3]), DatasetName.FASHION_MNIST)
    assert [s.source_class for s in samples] == ["boot", "dress"]


def test_bad_magic_rejected(tmp_path):
    paths = write_idx(tmp_path, np.zeros((1, 2, 2)), [0], image_magic=2052)
    with pytest.raises(DataFormatError):
        read_idx_arrays(*paths)


def test_truncated_file_rejected(tmp_path):
    image_path, label_path = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    image_path.write_bytes(image_path.read_bytes()[:-1])
    with pytest.raises(DataFormatError):
        read_idx_arrays(image_path, label_path)


def test_label_count_mismatch(tmp_path):
    image_path, _ = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    _, label_path = write_idx(tmp_path, np.zeros((3, 2, 2)), [0, 1, 2], suffix="other")
    with pytest.raises(DataFormatError):
        read_idx_arrays(image_path, label_path)


def test_missing_idx_file(tmp_path):
    with pytest.raises(DataIOError):
        read_idx_arrays(tmp_path / "nope", tmp_path / "nope-labels")


# Download ---------------------------------------------------------------------------

class FakeResponse:
    def __init__(self, content):
        self.content = content

    def raise_for_status(self):
        pass


class FakeSession:
    def __init__(self, content=b"abcd", error=None):
        self.content = content
        self.error = error
        self.urls = []

    def get(self, url, timeout=None):
        self.urls.append(url)
        if self.error:
            raise self.error
        return FakeResponse(self.content)


@pytest.fixture
def tiny_sizes(monkeypatch):
    sizes = {key: 4 for key in dataset_loader.IDX_FILES}
    monkeypatch.setitem(dataset_loader.IDX_SIZES, "mnist", sizes)


def test_download_writes_and_skips_existing(tmp_path, tiny_sizes):
    session = FakeSession()
    paths = download_idx_files(DatasetName.MNIST, tmp_path, session=session)
    assert len(session.urls) == 4
    assert all(url.startswith(dataset_loader.IDX_MIRRORS["mnist"]) for url in session.urls)
    assert paths["train_images"].read_bytes() == b"abcd"
    assert (paths["train_images"], paths["train_labels"]) == idx_paths(tmp_path, DatasetName.MNIST)
    again = FakeSession()
    download_idx_files(DatasetName.MNIST, tmp_path, session=again)
    assert again.urls == []


def test_download_size_mismatch(tmp_path, tiny_sizes):
    with pytest.raises(DataIOError):
        download_idx_files(DatasetName.MNIST, tmp_path, session=FakeSession(b"abc"))


def test_download_network_error(tmp_path, tiny_sizes):
    session = FakeSession(error=requests.exceptions.ConnectionError("offline"))
    with pytest.raises(DataIOError):
        download_idx_files(DatasetName.MNIST, tmp_path, session=session)


def test_download_unknown_dataset(tmp_path):
    with pytest.raises(DatasetError):
        download_idx_files(DatasetName.BARS_AND_STRIPES, tmp_path, session=FakeSession())


# Downscaling ---------------------------------------------------------------------------

def test_area_weights_rows_sum_to_one():
    np.testing.assert_allclose(area_weights(28, 8).sum(axis=1), np.ones(8))


def test_downscale_constant_and_blank():
    np.testing.assert_allclose(downscale_to_8x8(np.full(784, 0.4)), np.ones(64))
    assert np.all(downscale_to_8x8(np.zeros(784)) == 0.0)


def test_downscale_checkerboard_matches_area_oracle():
    board = np.indices((28, 28)).sum(axis=0) % 2
    np.testing.assert_allclose(downscale_to_8x8(board.reshape(-1)),
                               area_oracle(board, 8).reshape(-1), atol=1e-12)


def test_downscale_random_matches_area_oracle(rng):
    image = rng.uniform(0, 1, (28, 28))
    np.testing.assert_allclose(downscale(image.reshape(-1), 28, 8),
                               area_oracle(image, 8).reshape(-1), atol=1e-12)


def test_downscale_wrong_size():
    with pytest.raises(DatasetError):
        downscale(np.zeros(10), 28, 8)


# Tasks -------------------------------------------------------------------------------

def bars_spec(**changes):
    fields = dict(name=DatasetName.BARS_AND_STRIPES, class_pair=("bars", "stripes"), image_side=4,
                  split=SplitSpec(0.8, seed=5))
    fields.update(changes)
    return DatasetSpec(**fields)


def test_task_split_sizes_and_determinism():
    split = load_task(bars_spec())
    assert len(split.train) == 22 and len(split.test) == 6
    again = load_task(bars_spec())
    assert [s.id for s in split.train] == [s.id for s in again.train]
    other = load_task(bars_spec(split=SplitSpec(0.8, seed=6)))
    assert [s.id for s in split.train] != [s.id for s in other.train]


def test_task_labels_follow_class():
    split = load_task(bars_spec())
    for sample in split.train + split.test:
        assert sample.label == (1 if sample.source_class == "bars" else -1)


def test_label_map_override():
    split = load_task(bars_spec(label_map={"bars": -1, "stripes": 1}))
    assert all(s.label == -1 for s in split.train if s.source_class == "bars")
    with pytest.raises(DatasetError):
        bars_spec(label_map={"bars": 1, "stripes": 1}).resolved_label_map()


def test_digit_pairs_map_first_class_to_minus_one():
    spec = DatasetSpec(DatasetName.MNIST, ("3", "4"), 28)
    assert spec.resolved_label_map() == {"3": -1, "4": 1}


def test_subsample_caps_each_class():
    split = load_task(bars_spec(subsample=3, split=SplitSpec(1.0, seed=1)))
    assert len(split.train) == 6 and split.test == []
    classes = [s.source_class for s in split.train]
    assert classes.count("bars") == classes.count("stripes") == 3


def test_missing_class_rejected():
    samples = [s for s in generate_bars_and_stripes(2) if s.source_class == "bars"]
    with pytest.raises(DatasetError):
        make_task(bars_spec(image_side=2), samples)


def test_spec_checks():
    with pytest.raises(DatasetError):
        DatasetSpec(DatasetName.MNIST, ("3", "3"), 28)
    with pytest.raises(DatasetError):
        DatasetSpec(DatasetName.MNIST, ("3", "cat"), 28)
    with pytest.raises(DatasetError):
        SplitSpec(0.0)
    assert canonical_class(DatasetName.FASHION_MNIST, "Ankle Boot") == "boot"


def test_nist_task_needs_data_dir():
    with pytest.raises(DatasetError):
        load_task(DatasetSpec(DatasetName.NIST8X8, ("0", "1"), 8))


def test_nist_task_from_idx(tmp_path, rng):
    images = rng.integers(1, 255, (4, 28, 28), dtype=np.uint8)
    target = tmp_path / "mnist"
    target.mkdir()
    image_path, label_path = idx_paths(tmp_path, DatasetName.MNIST)
    written = write_idx(target, images, [0, 1, 2, 1], gz=True)
    written[0].rename(image_path)
    written[1].rename(label_path)
    split = load_task(DatasetSpec(DatasetName.NIST8X8, ("0", "1"), 8, SplitSpec(0.5, seed=2)), tmp_path)
    samples = split.train + split.test
    assert len(samples) == 3
    assert all(len(s.pixels) == 64 and s.pixels.max() == 1.0 for s in samples)


def test_benchmark_lookup():
    task = find_benchmark_task(DatasetName.NIST8X8, ("1", "0"))
    assert (task.n_qubits, task.n_layers) == (6, 6)
    assert find_benchmark_task(DatasetName.BARS_AND_STRIPES, ("bars", "stripes"), "angle").n_qubits == 8
    assert find_benchmark_task(DatasetName.MNIST, ("2", "8")) is None
    normalised = find_benchmark_task(DatasetName.BARS_AND_STRIPES, ("bars", "stripes"),
                                     "amplitude_normalized")
    assert (normalised.train_accuracy, normalised.test_accuracy) == (96, 95)
    assert len(BENCHMARK_TASKS) == 17


# Sample files ---------------------------------------------------------------------------

def test_sample_file_round_trip(tmp_path):
    samples = load_task(bars_spec()).train
    path = save_samples(tmp_path / "train.json", samples, bars_spec(), "train")
    loaded = load_samples(path)
    assert [s.id for s in loaded] == [s.id for s in samples]
    np.testing.assert_array_equal(loaded[0].pixels, samples[0].pixels)


def test_sample_file_errors(tmp_path):
    with pytest.raises(DataIOError):
        load_samples(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text('{"samples": [{"pixels": [0.5]}]}')
    with pytest.raises(DataFormatError):
        load_samples(tmp_path / "bad.json")


def test_sample_validation():
    with pytest.raises(DatasetError):
        LabeledSample([0.5, 1.5], 1, "bars", 0)
    with pytest.raises(DatasetError):
        LabeledSample([0.5], 0, "bars", 0)
