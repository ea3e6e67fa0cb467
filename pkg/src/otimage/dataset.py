"""IDX digit-dataset ingestion and the sampling protocol of the study.

The IDX container is big-endian binary: a 32-bit magic (0x00000803 for
image tensors, 0x00000801 for label vectors), 32-bit dimension counts,
then an unsigned-byte payload in row-major order.  Gzip compression is
handled transparently (.gz suffix or gzip magic bytes).

The sampling protocol shuffles the training pool deterministically,
deals a number of pairwise-disjoint partitions with a fixed count of
every digit, and draws a balanced test subset from the test split.
Training subsets of increasing size are nested: the size-s subset of a
partition is the first s examples of each digit, so accuracy curves over
the schedule share samples.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .density import RawImage
from .errors import (
    IdxBadMagicError,
    IdxCountMismatchError,
    IdxTruncatedError,
    InvalidArgumentError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledImage:
    image: RawImage
    label: int
    source_index: int = -1

    def __post_init__(self):
        if not 0 <= self.label <= 9:
            raise InvalidArgumentError(f"label must be a digit 0-9, got {self.label}")


@dataclass(frozen=True)
class ExperimentSpec:
    """Sampling protocol and classifier settings for one experiment run."""

    seed: int = 0
    partitions: int = 20
    per_class_per_partition: int = 50
    test_per_class: int = 20
    schedule_max: int = 25
    method: str = "euclidean"
    k: int = 1
    offset: float = 1.0
    intensity_scale: float = 255.0

    def __post_init__(self):
        if self.per_class_per_partition < self.schedule_max:
            raise InvalidArgumentError(
                "per_class_per_partition must cover the largest schedule size"
            )
        if self.test_per_class < 1:
            raise InvalidArgumentError("test_per_class must be >= 1")
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.schedule_max < 1:
            raise InvalidArgumentError("schedule_max must be >= 1")

    @property
    def schedule(self) -> list[int]:
        return list(range(1, self.schedule_max + 1))


@dataclass(frozen=True)
class Partition:
    """One training partition, grouped per class in shuffled order."""

    per_class: dict[int, list[LabeledImage]]

    def subset(self, size: int) -> list[LabeledImage]:
        """First ``size`` examples of every class (nested across sizes)."""
        out: list[LabeledImage] = []
        for label in sorted(self.per_class):
            items = self.per_class[label]
            if size > len(items):
                raise InvalidArgumentError(
                    f"subset size {size} exceeds partition class count {len(items)}"
                )
            out.extend(items[:size])
        return out

    def all_items(self) -> list[LabeledImage]:
        return self.subset(min(len(v) for v in self.per_class.values()))


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise IdxTruncatedError(
            f"{path}: expected {count} more bytes, got {len(data)}"
        )
    return data


def load_idx(images_path, labels_path) -> list[LabeledImage]:
    """Read a matched pair of IDX image and label files."""
    with _open_maybe_gzip(images_path) as fh:
        magic, n_images, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IMAGE_MAGIC:
            raise IdxBadMagicError(
                f"{images_path}: magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
            )
        payload = _read_exact(fh, n_images * rows * cols, images_path)
        pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n_images, rows, cols)

    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != LABEL_MAGIC:
            raise IdxBadMagicError(
                f"{labels_path}: magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(fh, n_labels, labels_path), dtype=np.uint8)

    if n_images != n_labels:
        raise IdxCountMismatchError(
            f"{images_path} holds {n_images} images but {labels_path} holds {n_labels} labels"
        )
    return [
        LabeledImage(RawImage(pixels[i].astype(float)), int(labels[i]), i)
        for i in range(n_images)
    ]


def build_partitions(
    train: list[LabeledImage],
    test: list[LabeledImage],
    spec: ExperimentSpec,
) -> tuple[list[Partition], list[LabeledImage]]:
    """Deterministically deal disjoint training partitions and a test subset."""
    rng = np.random.default_rng(spec.seed)
    train_order = rng.permutation(len(train))
    test_order = rng.permutation(len(test))

    by_class: dict[int, list[LabeledImage]] = {}
    for idx in train_order:
        item = train[idx]
        by_class.setdefault(item.label, []).append(item)

    labels = sorted(by_class)
    needed = spec.partitions * spec.per_class_per_partition
    for label in labels:
        if len(by_class[label]) < needed:
            raise InvalidArgumentError(
                f"class {label}: need {needed} training examples, have {len(by_class[label])}"
            )

    partitions = []
    for p in range(spec.partitions):
        lo = p * spec.per_class_per_partition
        hi = lo + spec.per_class_per_partition
        partitions.append(
            Partition({label: by_class[label][lo:hi] for label in labels})
        )

    test_by_class: dict[int, list[LabeledImage]] = {}
    for idx in test_order:
        item = test[idx]
        bucket = test_by_class.setdefault(item.label, [])
        if len(bucket) < spec.test_per_class:
            bucket.append(item)
    test_subset: list[LabeledImage] = []
    for label in sorted(test_by_class):
        if len(test_by_class[label]) < spec.test_per_class:
            raise InvalidArgumentError(
                f"class {label}: need {spec.test_per_class} test examples, "
                f"have {len(test_by_class[label])}"
            )
        test_subset.extend(test_by_class[label])
    return partitions, test_subset


def export_partition_manifest(partitions: list[Partition], path) -> None:
    """CSV of which source image landed in which partition slot."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["partition", "label", "position", "source_index"])
        for p, part in enumerate(partitions):
            for label in sorted(part.per_class):
                for pos, item in enumerate(part.per_class[label]):
                    writer.writerow([p, label, pos, item.source_index])
