#!/usr/bin/env python3
"""
Dataset Loader

Binary image-classification tasks for the quantum classifiers:

- Bars & Stripes, generated on the fly.
- MNIST and FashionMNIST, read from IDX files (plain or gzipped).
- NIST, an 8x8 variant obtained by area-weighted downscaling of MNIST.

Pixels are always scaled to [0, 1]. Tasks are built by filtering to a
class pair, mapping the classes to labels -1/+1 and splitting
deterministically by seed.
"""

import gzip
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import requests

from console import say, warn
from errors import DataFormatError, DataIOError, DatasetError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
NIST_SIDE = 8
MNIST_SIDE = 28

FASHION_CLASSES = (
    "tshirt", "trousers", "pullover", "dress", "coat",
    "sandal", "shirt", "sneaker", "bag", "boot",
)
FASHION_ALIASES = {
    "t-shirt": "tshirt", "top": "tshirt", "trouser": "trousers", "ankle_boot": "boot",
    "ankle boot": "boot",
}
DIGIT_CLASSES = tuple(str(d) for d in range(10))

IDX_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}
IDX_MIRRORS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
# Published sizes of the gzipped files, in bytes.
IDX_SIZES = {
    "mnist": {"train_images": 9912422, "train_labels": 28881,
              "test_images": 1648877, "test_labels": 4542},
    "fashion_mnist": {"train_images": 26421880, "train_labels": 29515,
                      "test_images": 4422102, "test_labels": 5148},
}


class DatasetName(str, Enum):
    BARS_AND_STRIPES = "bars_and_stripes"
    NIST8X8 = "nist8x8"
    MNIST = "mnist"
    FASHION_MNIST = "fashion_mnist"


@dataclass
class LabeledSample:
    """One image. `label` is None until the sample is assigned to a task."""
    pixels: np.ndarray
    label: Optional[int]
    source_class: str
    id: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1)
        if len(self.pixels) and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise DatasetError(f"sample {self.id} has pixels outside [0, 1]")
        if self.label is not None and self.label not in (-1, 1):
            raise DatasetError(f"sample {self.id} has label {self.label}, expected -1 or +1")

    def with_label(self, label: int) -> "LabeledSample":
        return LabeledSample(self.pixels, label, self.source_class, self.id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "source_class": self.source_class,
            "label": self.label,
            "pixels": [float(p) for p in self.pixels],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LabeledSample":
        return cls(np.asarray(data["pixels"], dtype=float), data.get("label"),
                   str(data["source_class"]), int(data["id"]))


@dataclass
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise DatasetError(f"train_fraction must be in (0, 1], got {self.train_fraction}")


@dataclass
class DatasetSpec:
    name: DatasetName
    class_pair: Tuple[str, str]
    image_side: int
    split: SplitSpec = field(default_factory=SplitSpec)
    subsample: Optional[int] = None  # per-class cap
    label_map: Optional[Dict[str, int]] = None

    def __post_init__(self):
        self.name = DatasetName(self.name)
        self.class_pair = tuple(canonical_class(self.name, c) for c in self.class_pair)
        if len(self.class_pair) != 2 or self.class_pair[0] == self.class_pair[1]:
            raise DatasetError(f"class_pair must name two different classes, got {self.class_pair}")
        if self.subsample is not None and self.subsample < 1:
            raise DatasetError(f"subsample must be >= 1, got {self.subsample}")

    def resolved_label_map(self) -> Dict[str, int]:
        """Class -> label. Bars are +1 and stripes -1; otherwise first class -1, second +1."""
        if self.label_map is not None:
            mapping = {canonical_class(self.name, k): int(v) for k, v in self.label_map.items()}
            if set(mapping) != set(self.class_pair) or sorted(mapping.values()) != [-1, 1]:
                raise DatasetError(
                    f"label_map {self.label_map} must map {self.class_pair} onto -1 and +1")
            return mapping
        if self.name == DatasetName.BARS_AND_STRIPES and set(self.class_pair) == {"bars", "stripes"}:
            return {"bars": 1, "stripes": -1}
        return {self.class_pair[0]: -1, self.class_pair[1]: 1}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name.value,
            "class_pair": list(self.class_pair),
            "image_side": self.image_side,
            "split": {"train_fraction": self.split.train_fraction, "seed": self.split.seed},
            "subsample": self.subsample,
            "label_map": self.resolved_label_map(),
        }


@dataclass(frozen=True)
class BenchmarkTask:
    """Benchmark task: dataset, classes, embedding, circuit size and expected accuracies (%)."""
    dataset: DatasetName
    class_pair: Tuple[str, str]
    encoding: str
    n_qubits: int
    n_layers: int
    train_accuracy: int
    test_accuracy: int


BENCHMARK_TASKS = (
    BenchmarkTask(DatasetName.BARS_AND_STRIPES, ("bars", "stripes"), "amplitude_overflow", 4, 8, 96, 95),
    BenchmarkTask(DatasetName.BARS_AND_STRIPES, ("bars", "stripes"), "angle", 8, 8, 95, 95),
    BenchmarkTask(DatasetName.NIST8X8, ("0", "1"), "amplitude_overflow", 6, 6, 98, 99),
    BenchmarkTask(DatasetName.NIST8X8, ("3", "4"), "amplitude_overflow", 6, 6, 100, 100),
    BenchmarkTask(DatasetName.NIST8X8, ("5", "6"), "amplitude_overflow", 6, 6, 98, 100),
    BenchmarkTask(DatasetName.NIST8X8, ("6", "9"), "amplitude_overflow", 6, 6, 96, 98),
    BenchmarkTask(DatasetName.NIST8X8, ("1", "7"), "amplitude_overflow", 6, 6, 93, 88),
    BenchmarkTask(DatasetName.MNIST, ("0", "1"), "amplitude_overflow", 10, 10, 92, 91),
    BenchmarkTask(DatasetName.MNIST, ("3", "4"), "amplitude_overflow", 10, 10, 88, 82),
    BenchmarkTask(DatasetName.MNIST, ("5", "6"), "amplitude_overflow", 10, 10, 87, 87),
    BenchmarkTask(DatasetName.MNIST, ("6", "9"), "amplitude_overflow", 10, 10, 62, 68),
    BenchmarkTask(DatasetName.MNIST, ("1", "7"), "amplitude_overflow", 10, 10, 87, 83),
    BenchmarkTask(DatasetName.FASHION_MNIST, ("dress", "shirt"), "amplitude_overflow", 10, 10, 74, 70),
    BenchmarkTask(DatasetName.FASHION_MNIST, ("boot", "trousers"), "amplitude_overflow", 10, 10, 100, 99),
    BenchmarkTask(DatasetName.FASHION_MNIST, ("coat", "sandal"), "amplitude_overflow", 10, 10, 96, 95),
    BenchmarkTask(DatasetName.FASHION_MNIST, ("bag", "sandal"), "amplitude_overflow", 10, 10, 74, 69),
    BenchmarkTask(DatasetName.FASHION_MNIST, ("boot", "dress"), "amplitude_overflow", 10, 10, 90, 91),
)


def find_benchmark_task(name: DatasetName, class_pair: Sequence[str],
                        encoding: str = "amplitude_overflow") -> Optional[BenchmarkTask]:
    """Benchmark row for a task; both amplitude embeddings match the amplitude rows."""
    name = DatasetName(name)
    pair = tuple(canonical_class(name, c) for c in class_pair)
    for task in BENCHMARK_TASKS:
        if (task.dataset == name and set(task.class_pair) == set(pair)
                and _embedding_family(task.encoding) == _embedding_family(encoding)):
            return task
    return None


def _embedding_family(encoding: str) -> str:
    return "angle" if encoding == "angle" else "amplitude"


@dataclass
class TaskSplit:
    train: List[LabeledSample]
    test: List[LabeledSample]


def class_names(name: DatasetName) -> Tuple[str, ...]:
    name = DatasetName(name)
    if name == DatasetName.BARS_AND_STRIPES:
        return ("bars", "stripes")
    if name == DatasetName.FASHION_MNIST:
        return FASHION_CLASSES
    return DIGIT_CLASSES


def canonical_class(name: DatasetName, label: Any) -> str:
    text = str(label).strip().lower()
    if DatasetName(name) == DatasetName.FASHION_MNIST:
        text = FASHION_ALIASES.get(text, text)
    if text not in class_names(name):
        raise DatasetError(f"unknown class {label!r} for {DatasetName(name).value}")
    return text


# Bars & Stripes -------------------------------------------------------------

def generate_bars_and_stripes(side: int) -> List[LabeledSample]:
    """All non-empty, non-full bar and stripe patterns of a side x side grid.

    Bars fill whole columns, stripes whole rows. Column (or row) j is on
    when bit (side - 1 - j) of the pattern mask is set.
    """
    if side < 2:
        raise DatasetError(f"Bars & Stripes needs side >= 2, got {side}")
    samples: List[LabeledSample] = []
    for source_class, label in (("bars", 1), ("stripes", -1)):
        for mask in range(1, 2 ** side - 1):
            lines = np.array([(mask >> (side - 1 - j)) & 1 for j in range(side)], dtype=float)
            image = np.tile(lines, (side, 1))
            if source_class == "stripes":
                image = image.T
            samples.append(LabeledSample(image.reshape(-1), label, source_class, len(samples)))
    return samples


def angle_features(pixels: Sequence[float], side: int) -> np.ndarray:
    """pi * (row means, column means): the 2 * side rotation angles of the angle model."""
    image = np.asarray(pixels, dtype=float).reshape(side, side)
    return np.pi * np.concatenate([image.mean(axis=1), image.mean(axis=0)])


# IDX files ---------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except FileNotFoundError:
        raise DataIOError(f"IDX file not found: {path}", path=str(path))
    except (OSError, EOFError) as e:
        raise DataFormatError(f"cannot read IDX file {path}: {e}", path=str(path))


def read_idx_arrays(images_path, labels_path) -> Tuple[np.ndarray, np.ndarray]:
    """(count, rows, cols) uint8 images and (count,) uint8 labels."""
    images_raw = _read_bytes(images_path)
    labels_raw = _read_bytes(labels_path)
    if len(images_raw) < 16:
        raise DataFormatError(f"{images_path}: truncated header", path=str(images_path))
    magic, count, rows, cols = struct.unpack(">IIII", images_raw[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"{images_path}: bad magic {magic}, expected {IDX_IMAGE_MAGIC}",
                              path=str(images_path))
    if len(images_raw) < 16 + count * rows * cols:
        raise DataFormatError(
            f"{images_path}: truncated, {count} images of {rows}x{cols} need "
            f"{16 + count * rows * cols} bytes, file has {len(images_raw)}",
            path=str(images_path))
    if len(labels_raw) < 8:
        raise DataFormatError(f"{labels_path}: truncated header", path=str(labels_path))
    label_magic, label_count = struct.unpack(">II", labels_raw[:8])
    if label_magic != IDX_LABEL_MAGIC:
        raise DataFormatError(f"{labels_path}: bad magic {label_magic}, expected {IDX_LABEL_MAGIC}",
                              path=str(labels_path))
    if len(labels_raw) < 8 + label_count:
        raise DataFormatError(f"{labels_path}: truncated, expected {label_count} labels",
                              path=str(labels_path))
    if label_count != count:
        raise DataFormatError(f"{count} images but {label_count} labels",
                              images=str(images_path), labels=str(labels_path))
    images = np.frombuffer(images_raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(labels_raw, dtype=np.uint8, count=count, offset=8)
    return images.reshape(count, rows, cols), labels


def load_idx_images(images_path, labels_path,
                    dataset: DatasetName = DatasetName.MNIST,
                    keep_classes: Optional[Sequence[str]] = None) -> List[LabeledSample]:
    """Samples from an IDX image/label file pair, pixels scaled by 1/255.

    `keep_classes` skips other classes while reading, which keeps memory
    small for the 60000-image training files.
    """
    images, labels = read_idx_arrays(images_path, labels_path)
    names = FASHION_CLASSES if DatasetName(dataset) == DatasetName.FASHION_MNIST else DIGIT_CLASSES
    keep = None if keep_classes is None else {canonical_class(dataset, c) for c in keep_classes}
    samples = []
    for index, (image, label) in enumerate(zip(images, labels)):
        if int(label) >= len(names):
            raise DataFormatError(f"{labels_path}: label {int(label)} at index {index} is not a class")
        source_class = names[int(label)]
        if keep is not None and source_class not in keep:
            continue
        samples.append(LabeledSample(image.reshape(-1) / 255.0, None, source_class, index))
    return samples


def download_idx_files(dataset: DatasetName, target_dir, session: Optional[requests.Session] = None,
                       timeout: float = 60.0) -> Dict[str, Path]:
    """Fetch the four gzipped IDX files, verifying their published sizes.

    Files already present with the right size are not downloaded again.
    """
    dataset = DatasetName(dataset)
    if dataset.value not in IDX_MIRRORS:
        raise DatasetError(f"{dataset.value} has no downloadable IDX files")
    target_dir = Path(target_dir) / dataset.value
    target_dir.mkdir(parents=True, exist_ok=True)
    session = session or requests.Session()
    paths = {}
    for key, filename in IDX_FILES.items():
        path = target_dir / filename
        expected = IDX_SIZES[dataset.value][key]
        if path.exists() and path.stat().st_size == expected:
            say(f"✅ {filename} already present")
            paths[key] = path
            continue
        url = IDX_MIRRORS[dataset.value] + filename
        say(f"⬇️ Downloading {url}")
        try:
            response = session.get(url, timeout=timeout)
            response.raise_for_status()
        except requests.exceptions.RequestException as e:
            raise DataIOError(f"download of {url} failed: {e}", url=url)
        if len(response.content) != expected:
            raise DataIOError(
                f"{filename}: got {len(response.content)} bytes, published size is {expected}",
                url=url)
        path.write_bytes(response.content)
        paths[key] = path
    return paths


def idx_paths(data_dir, dataset: DatasetName, partition: str = "train") -> Tuple[Path, Path]:
    """Image and label paths for a partition inside a download directory."""
    base = Path(data_dir) / DatasetName(dataset).value
    return base / IDX_FILES[f"{partition}_images"], base / IDX_FILES[f"{partition}_labels"]


# Preprocessing ---------------------------------------------------------------

def area_weights(source: int, target: int) -> np.ndarray:
    """(target, source) matrix: overlap of source pixel j with target bin i, per bin width."""
    width = source / target
    weights = np.zeros((target, source))
    for i in range(target):
        low, high = i * width, (i + 1) * width
        for j in range(int(np.floor(low)), min(source, int(np.ceil(high)))):
            weights[i, j] = max(0.0, min(high, j + 1) - max(low, j))
    return weights / width


def downscale(pixels: Sequence[float], source_side: int, target_side: int) -> np.ndarray:
    """Area-weighted block mean, rescaled so the brightest bin is 1 (unless all zero)."""
    image = np.asarray(pixels, dtype=float)
    if image.size != source_side * source_side:
        raise DatasetError(
            f"expected a {source_side}x{source_side} image, got {image.size} pixels")
    image = image.reshape(source_side, source_side)
    weights = area_weights(source_side, target_side)
    small = weights @ image @ weights.T
    peak = float(small.max())
    if peak > 0.0:
        small = small / peak
    return np.clip(small, 0.0, 1.0).reshape(-1)


def downscale_to_8x8(pixels: Sequence[float]) -> np.ndarray:
    """28x28 image -> 64 pixels."""
    return downscale(pixels, MNIST_SIDE, NIST_SIDE)


def to_nist(samples: Sequence[LabeledSample]) -> List[LabeledSample]:
    return [LabeledSample(downscale_to_8x8(s.pixels), s.label, s.source_class, s.id)
            for s in samples]


# Tasks ----------------------------------------------------------------------

def make_task(spec: DatasetSpec, raw: Sequence[LabeledSample]) -> TaskSplit:
    """Filter to the class pair, relabel, optionally cap per class and split by seed."""
    label_map = spec.resolved_label_map()
    rng = np.random.default_rng(spec.split.seed)
    chosen: List[LabeledSample] = []
    for source_class in spec.class_pair:
        members = sorted((s for s in raw if s.source_class == source_class), key=lambda s: s.id)
        if not members:
            raise DatasetError(f"class {source_class!r} has no samples in {spec.name.value}")
        if spec.subsample is not None and len(members) > spec.subsample:
            picks = np.sort(rng.permutation(len(members))[: spec.subsample])
            members = [members[i] for i in picks]
        chosen.extend(s.with_label(label_map[source_class]) for s in members)
    order = rng.permutation(len(chosen))
    shuffled = [chosen[i] for i in order]
    cut = int(round(spec.split.train_fraction * len(shuffled)))
    return TaskSplit(train=shuffled[:cut], test=shuffled[cut:])


def load_task(spec: DatasetSpec, data_dir=None) -> TaskSplit:
    """Build the task for `spec`, reading IDX files from `data_dir` where needed."""
    if spec.name == DatasetName.BARS_AND_STRIPES:
        return make_task(spec, generate_bars_and_stripes(spec.image_side))
    if data_dir is None:
        raise DatasetError(f"{spec.name.value} needs a data directory with IDX files")
    source = DatasetName.MNIST if spec.name == DatasetName.NIST8X8 else spec.name
    images, labels = idx_paths(data_dir, source, "train")
    samples = load_idx_images(images, labels, source, keep_classes=spec.class_pair)
    if spec.name == DatasetName.NIST8X8:
        samples = to_nist(samples)
    say(f"📦 Loaded {len(samples)} {spec.name.value} samples for classes {spec.class_pair}")
    return make_task(spec, samples)


# JSON sample files -----------------------------------------------------------

def save_samples(path, samples: Sequence[LabeledSample], spec: Optional[DatasetSpec] = None,
                 partition: Optional[str] = None) -> Path:
    path = Path(path)
    document = {
        "dataset": spec.to_dict() if spec is not None else None,
        "partition": partition,
        "count": len(samples),
        "samples": [s.to_dict() for s in samples],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, sort_keys=True) + "\n")
    except OSError as e:
        raise DataIOError(f"cannot write sample file {path}: {e}", path=str(path))
    return path


def load_samples(path) -> List[LabeledSample]:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataIOError(f"sample file not found: {path}", path=str(path))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"sample file {path} is not valid JSON: {e}", path=str(path))
    try:
        samples = [LabeledSample.from_dict(item) for item in document["samples"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"sample file {path} is malformed: {e}", path=str(path))
    if not samples:
        warn(f"{path} contains no samples")
    return samples
