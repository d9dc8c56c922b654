"""Server-side round logic for both federated algorithms, plus byte-exact
communication accounting.

The scalar-upload algorithm runs each active client's local SGD, projects
the resulting drift onto the round's shared direction vector, and moves the
server parameters along that direction by the averaged scalar:

    x_{k+1} = x_k + (1/N) * (sum over all clients of r_n) * v_k

Inactive clients contribute an exact 0.0 and the sum runs in ascending
client id.  The divisor stays N even under partial participation unless
``divide_by_m`` is set.  The baseline algorithm averages the active clients'
full end-of-stage parameter vectors instead.  Both call the same client
stage code path, so per-client work is identical across algorithms.

Wire model (never transmitted, but modeled byte-exactly for the ledger):
every message is a 16-byte little-endian header (u64 round, u32 sender id,
u32 message kind) followed by the payload.  Payloads are little-endian
float64s, except the seed-mode direction broadcast whose payload is
(u64 master_seed, u64 round) = 16 bytes, which is what makes the scalar
upload's O(1) cost per round possible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import TYPE_CHECKING

import numpy as np

from .data import Dataset, Partition, accuracy
from .linalg import ParamVector, inner, norm_sq
from .model import MlpSpec, grad, local_sgd, loss
from .randomness import (
    Distribution,
    RngStream,
    sample_client_set,
    sample_direction,
)

if TYPE_CHECKING:  # imported only for annotations; avoids a module cycle
    from .harness import ExperimentConfig


class Algorithm(str, Enum):
    FEDSCALAR = "fedscalar"
    FEDAVG = "fedavg"


class DirectionMode(str, Enum):
    SEED = "seed"            # broadcast (master_seed, round); client regenerates v_k
    FULL_VECTOR = "full_vector"  # broadcast all d entries


class MessageKind(IntEnum):
    PARAMS_DOWN = 1
    DIRECTION_SEED = 2
    DIRECTION_FULL = 3
    SCALAR_UP = 4
    PARAMS_UP = 5


HEADER_BYTES = 16
FLOAT_BYTES = 8
SERVER_ID = 0


def pack_header(round_index: int, sender: int, kind: MessageKind) -> bytes:
    """16-byte message header: u64 round, u32 sender, u32 kind (little-endian)."""
    return struct.pack("<QII", round_index, sender, int(kind))


def pack_floats(values: np.ndarray) -> bytes:
    """Payload encoding for float vectors: little-endian float64s."""
    return np.asarray(values, dtype="<f8").tobytes()


def pack_direction_seed(master_seed: int, round_index: int) -> bytes:
    """Seed-mode direction payload: (u64 master_seed, u64 round)."""
    return struct.pack("<QQ", master_seed & 0xFFFFFFFFFFFFFFFF, round_index)


def scalar_upload_payload_bytes(algorithm: Algorithm, d: int) -> int:
    """Per-client upload payload per round: one float vs a whole vector."""
    return FLOAT_BYTES if algorithm is Algorithm.FEDSCALAR else FLOAT_BYTES * d


def account_bytes(
    cfg: "ExperimentConfig", algorithm: Algorithm, round_index: int
) -> tuple[int, int]:
    """(upload, download) bytes for one round, headers included.

    Every active client receives the current parameters; scalar-upload
    rounds additionally receive the direction (16-byte seed payload by
    default, all 8d bytes in full-vector mode).  Uploads are one scalar per
    active client versus one full parameter vector.  The totals are
    constant across rounds, so round_index only documents which round the
    figure belongs to.
    """
    del round_index
    d = MlpSpec(cfg.layer_sizes).param_count
    m = cfg.active_per_round
    params_msg = HEADER_BYTES + FLOAT_BYTES * d
    upload = m * (HEADER_BYTES + scalar_upload_payload_bytes(algorithm, d))
    download = m * params_msg
    if algorithm is Algorithm.FEDSCALAR:
        direction_payload = (
            len(pack_direction_seed(cfg.master_seed, 0))
            if cfg.direction_mode is DirectionMode.SEED
            else FLOAT_BYTES * d
        )
        download += m * (HEADER_BYTES + direction_payload)
    return upload, download


@dataclass(frozen=True)
class ClientScalar:
    """One client's upload for one round: the drift projected on v_k."""

    client_id: int
    round: int
    value: float


@dataclass
class ServerState:
    """Server snapshot entering a round: round counter and current parameters."""

    round: int
    params: ParamVector


@dataclass
class RoundRecord:
    """Metrics for one round.

    Evaluation fields (train_loss, test_accuracy, grad_norm_sq) are filled
    only on evaluation rounds and describe the parameters *entering* the
    round; byte fields are filled every round and match the ledger exactly.
    The remaining fields are diagnostics for verification: the applied
    update scalar, every client's uploaded scalar, the active set, and the
    largest squared stochastic-gradient norm seen in the round.
    """

    round: int
    train_loss: float | None
    test_accuracy: float | None
    grad_norm_sq: float | None
    upload_bytes: int
    download_bytes: int
    update_scalar: float | None = None
    client_scalars: tuple[ClientScalar, ...] | None = None
    active_ids: tuple[int, ...] = ()
    max_grad_sq: float = 0.0


@dataclass
class CommLedger:
    """Cumulative communication account, one entry per completed round."""

    upload_per_round: list[int] = field(default_factory=list)
    download_per_round: list[int] = field(default_factory=list)

    def add(self, upload: int, download: int) -> None:
        self.upload_per_round.append(upload)
        self.download_per_round.append(download)

    @property
    def total_upload(self) -> int:
        return sum(self.upload_per_round)

    @property
    def total_download(self) -> int:
        return sum(self.download_per_round)


def client_stage(
    spec: MlpSpec,
    params: ParamVector,
    ds: Dataset,
    client_index: np.ndarray,
    cfg: "ExperimentConfig",
    client_id: int,
    round_index: int,
    grad_sq_out: list[float] | None = None,
) -> tuple[ParamVector, ParamVector]:
    """One client's local work for one round; shared by both algorithms.

    The batch stream is keyed by (master_seed, client id, round) only, so a
    client's trajectory is identical no matter which algorithm the server
    runs on top of it.
    """
    stream = RngStream(cfg.master_seed, f"batch:{client_id}:round:{round_index}")
    return local_sgd(
        spec,
        params,
        ds.xy(client_index),
        cfg.local_steps,
        cfg.alpha,
        cfg.batch_size,
        stream,
        grad_sq_out=grad_sq_out,
    )


def _evaluate(
    spec: MlpSpec, params: ParamVector, ds: Dataset, part: Partition
) -> tuple[float, float | None, float]:
    """(train loss, test accuracy, squared train-gradient norm) at `params`."""
    train = ds.xy(part.train_indices)
    train_loss = loss(spec, params, train)
    grad_sq = norm_sq(grad(spec, params, train))
    test_acc = (
        accuracy(spec, params, ds, part.test_indices)
        if part.test_indices.size
        else None
    )
    return train_loss, test_acc, grad_sq


def _should_evaluate(cfg: "ExperimentConfig", round_index: int) -> bool:
    return round_index % cfg.eval_every == 0


def fedscalar_round(
    state: ServerState, part: Partition, ds: Dataset, cfg: "ExperimentConfig"
) -> tuple[ServerState, RoundRecord]:
    """Advance the scalar-upload protocol by one round."""
    spec = MlpSpec(cfg.layer_sizes)
    k = state.round
    direction = sample_direction(cfg.master_seed, k, cfg.dist, spec.param_count)
    active = sample_client_set(
        cfg.master_seed, k, cfg.num_clients, cfg.active_per_round
    )
    active_set = set(active)

    train_loss = test_acc = grad_sq = None
    if _should_evaluate(cfg, k):
        train_loss, test_acc, grad_sq = _evaluate(spec, state.params, ds, part)

    grad_sq_seen: list[float] = []
    scalars = []
    total = 0.0
    for client_id in range(1, cfg.num_clients + 1):
        if client_id in active_set:
            _, delta = client_stage(
                spec, state.params, ds, part.client_indices[client_id - 1],
                cfg, client_id, k, grad_sq_out=grad_sq_seen,
            )
            value = inner(delta, direction.values)
        else:
            value = 0.0
        scalars.append(ClientScalar(client_id=client_id, round=k, value=value))
        total += value

    divisor = cfg.active_per_round if cfg.divide_by_m else cfg.num_clients
    update_scalar = total / divisor
    new_params = state.params + update_scalar * direction.values

    upload, download = account_bytes(cfg, Algorithm.FEDSCALAR, k)
    record = RoundRecord(
        round=k,
        train_loss=train_loss,
        test_accuracy=test_acc,
        grad_norm_sq=grad_sq,
        upload_bytes=upload,
        download_bytes=download,
        update_scalar=update_scalar,
        client_scalars=tuple(scalars),
        active_ids=active,
        max_grad_sq=max(grad_sq_seen, default=0.0),
    )
    return ServerState(round=k + 1, params=new_params), record


def fedavg_round(
    state: ServerState, part: Partition, ds: Dataset, cfg: "ExperimentConfig"
) -> tuple[ServerState, RoundRecord]:
    """Advance the full-vector averaging baseline by one round.

    x_{k+1} is the mean of the active clients' end-of-stage parameters,
    accumulated in ascending client id.
    """
    spec = MlpSpec(cfg.layer_sizes)
    k = state.round
    active = sample_client_set(
        cfg.master_seed, k, cfg.num_clients, cfg.active_per_round
    )

    train_loss = test_acc = grad_sq = None
    if _should_evaluate(cfg, k):
        train_loss, test_acc, grad_sq = _evaluate(spec, state.params, ds, part)

    grad_sq_seen: list[float] = []
    acc = np.zeros_like(state.params)
    for client_id in active:
        end, _ = client_stage(
            spec, state.params, ds, part.client_indices[client_id - 1],
            cfg, client_id, k, grad_sq_out=grad_sq_seen,
        )
        acc += end
    new_params = acc / len(active)

    upload, download = account_bytes(cfg, Algorithm.FEDAVG, k)
    record = RoundRecord(
        round=k,
        train_loss=train_loss,
        test_accuracy=test_acc,
        grad_norm_sq=grad_sq,
        upload_bytes=upload,
        download_bytes=download,
        active_ids=active,
        max_grad_sq=max(grad_sq_seen, default=0.0),
    )
    return ServerState(round=k + 1, params=new_params), record
