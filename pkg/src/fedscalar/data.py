"""Digit image dataset loading, client partitioning, and accuracy scoring.

The on-disk format is a headerless CSV: one sample per line, 64 integer
pixels in 0..16 (an 8x8 gray image, row-major) followed by an integer label
in 0..9.  Pixels are scaled by 1/16 into [0, 1] on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .linalg import ParamVector
from .model import Batch, LabeledSample, MlpSpec, forward_logits
from .randomness import RngStream

PIXELS = 64
PIXEL_MAX = 16
CLASS_COUNT = 10


class DataError(ValueError):
    """A dataset file or split request that cannot be honored."""


class PartitionScheme(str, Enum):
    IID = "iid"
    LABEL_SKEW = "label_skew"


@dataclass
class Dataset:
    """In-memory dataset: feature matrix in [0, 1] and integer labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int = CLASS_COUNT

    def __len__(self) -> int:
        return len(self.labels)

    def sample(self, index: int) -> LabeledSample:
        return LabeledSample(self.features[index], int(self.labels[index]))

    def xy(self, indices: np.ndarray) -> Batch:
        """Array view of a subset, ready for the model functions."""
        return self.features[indices], self.labels[indices]


def load_digits(path: str) -> Dataset:
    """Parse a digits CSV, validating every field.

    Errors name the offending 1-based line so a bad row can be found by eye.
    """
    try:
        with open(path, "r", encoding="ascii") as handle:
            text = handle.read()
    except OSError as exc:
        raise DataError(f"cannot read dataset file {path!r}: {exc}") from exc

    features: list[list[int]] = []
    labels: list[int] = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    for lineno, line in enumerate(lines, start=1):
        fields = line.split(",")
        if len(fields) != PIXELS + 1:
            raise DataError(
                f"expected {PIXELS + 1} comma-separated fields, got {len(fields)} (line {lineno})"
            )
        try:
            values = [int(f) for f in fields]
        except ValueError as exc:
            raise DataError(f"non-integer field (line {lineno})") from exc
        pixels, label = values[:PIXELS], values[PIXELS]
        for p in pixels:
            if not 0 <= p <= PIXEL_MAX:
                raise DataError(f"pixel value {p} out of range 0..{PIXEL_MAX} (line {lineno})")
        if not 0 <= label < CLASS_COUNT:
            raise DataError(f"label {label} out of range 0..{CLASS_COUNT - 1} (line {lineno})")
        features.append(pixels)
        labels.append(label)
    if not features:
        raise DataError(f"dataset file {path!r} is empty")

    matrix = np.array(features, dtype=np.float64) / PIXEL_MAX
    return Dataset(features=matrix, labels=np.array(labels, dtype=np.int64))


@dataclass
class Partition:
    """Disjoint per-client index lists plus the held-out test indices."""

    client_indices: list[np.ndarray]
    test_indices: np.ndarray

    @cached_property
    def train_indices(self) -> np.ndarray:
        """Union of all client samples, ascending."""
        return np.sort(np.concatenate(self.client_indices))

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)


def partition(
    ds: Dataset,
    num_clients: int,
    per_client: int,
    scheme: PartitionScheme,
    stream: RngStream,
) -> Partition:
    """Split a dataset into equal client shards plus a held-out test set.

    The training pool is the first num_clients * per_client entries of a
    seeded shuffle; leftovers form the test set.  IID hands out contiguous
    blocks of the shuffled pool.  LABEL_SKEW stable-sorts the pool by label
    first, so each client sees only one or two classes.
    """
    if num_clients < 1 or per_client < 1:
        raise DataError(
            f"need positive client count and shard size, got {num_clients} x {per_client}"
        )
    need = num_clients * per_client
    if need > len(ds):
        raise DataError(
            f"partition needs {need} samples but the dataset has {len(ds)}"
        )
    perm = stream.gen.permutation(len(ds))
    pool = perm[:need]
    test = np.sort(perm[need:])
    if scheme is PartitionScheme.LABEL_SKEW:
        pool = pool[np.argsort(ds.labels[pool], kind="stable")]
    clients = [
        np.sort(pool[i * per_client : (i + 1) * per_client]) for i in range(num_clients)
    ]
    return Partition(client_indices=clients, test_indices=test)


def accuracy(spec: MlpSpec, params: ParamVector, ds: Dataset, indices: np.ndarray) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Ties resolve toward the lowest class index (argmax takes the first max).
    """
    indices = np.asarray(indices)
    if indices.size == 0:
        raise DataError("accuracy over an empty index set is undefined")
    logits = forward_logits(spec, params, ds.features[indices])
    predictions = logits.argmax(axis=1)
    return float((predictions == ds.labels[indices]).mean())
