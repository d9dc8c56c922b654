"""Seeded, reproducible sampling: labeled PRNG streams, per-round direction
vectors, client subsets, and minibatch indices.

The generator is pinned to numpy's PCG64.  Stream separation hashes the
stream label with SHA-256 and folds the digest words into the seed material,
so distinct labels under one master seed give statistically independent
streams, and the same (master_seed, label) pair always reproduces the same
sequence bitwise.  No environment variable can override a seed: every draw
is a pure function of explicit arguments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .linalg import ParamVector

_U64 = 0xFFFFFFFFFFFFFFFF


class Distribution(str, Enum):
    """Entry distribution for direction vectors: iid, zero mean, unit variance."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


def _label_words(label: str) -> list[int]:
    # SHA-256 digest split into four u64 words; stable across platforms.
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]


def make_generator(master_seed: int, label: str) -> np.random.Generator:
    """PCG64 generator keyed by (master_seed, label)."""
    seq = np.random.SeedSequence([master_seed & _U64, *_label_words(label)])
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class RngStream:
    """Single-owner PRNG stream.

    A stream is identified by (master_seed, stream_label); two streams built
    from the same pair emit identical sequences.  Never advance one stream
    from two concurrent workers -- derive one stream per worker instead.
    """

    master_seed: int
    stream_label: str
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.gen = make_generator(self.master_seed, self.stream_label)


@dataclass(frozen=True)
class Direction:
    """Per-round direction vector tagged with its distribution and derivation.

    Holding (master_seed, round) alongside the values lets a receiver verify
    that the vector can be regenerated bitwise from the seed alone, which is
    what makes the 16-byte seed broadcast equivalent to shipping all d
    entries.
    """

    round: int
    dist: Distribution
    values: ParamVector
    master_seed: int


def sample_direction(
    master_seed: int, round_index: int, dist: Distribution, d: int
) -> Direction:
    """Draw the direction vector for one round.

    Entries are iid with zero mean and unit variance: standard normal for
    GAUSSIAN, +/-1 equiprobable for RADEMACHER.  The result depends only on
    (master_seed, round_index, dist, d), so any party can regenerate it.
    """
    if d < 1:
        raise ValueError(f"direction dimension must be >= 1, got {d}")
    gen = make_generator(master_seed, f"direction:{round_index}:{dist.value}:{d}")
    if dist is Distribution.GAUSSIAN:
        values = gen.standard_normal(d)
    else:
        values = gen.integers(0, 2, size=d).astype(np.float64) * 2.0 - 1.0
    values.setflags(write=False)
    return Direction(round=round_index, dist=dist, values=values, master_seed=master_seed)


def sample_client_set(
    master_seed: int, round_index: int, num_clients: int, active_count: int
) -> tuple[int, ...]:
    """Uniformly sample `active_count` distinct client ids from {1..num_clients}.

    Returned ascending so aggregation order is canonical.
    """
    if num_clients < 1:
        raise ValueError(f"need at least one client, got {num_clients}")
    if not 1 <= active_count <= num_clients:
        raise ValueError(
            f"active_count must be in [1, {num_clients}], got {active_count}"
        )
    gen = make_generator(master_seed, f"client-sample:{round_index}")
    ids = gen.choice(num_clients, size=active_count, replace=False) + 1
    return tuple(sorted(int(i) for i in ids))


def sample_batch(stream: RngStream, pool_size: int, batch_size: int) -> np.ndarray:
    """Draw `batch_size` distinct indices in [0, pool_size) without replacement.

    Indices are returned sorted; a batch is a set, so the canonical order
    keeps downstream gradient sums deterministic.
    """
    if not 1 <= batch_size <= pool_size:
        raise ValueError(
            f"batch_size must be in [1, {pool_size}], got {batch_size}"
        )
    idx = stream.gen.choice(pool_size, size=batch_size, replace=False)
    idx.sort()
    return idx
