"""Numerical laboratory for the scalar-projection estimator.

The protocol reconstructs a d-dimensional drift from a single scalar via
g_hat = <v, g> v with v an iid zero-mean unit-variance direction.  This
module measures that estimator from three independent angles:

  * Monte Carlo over fresh directions (any distribution, any d);
  * exact enumeration of all 2^d sign patterns (Rademacher, d <= 20);
  * the documented closed-form covariance expression for the averaged
    update, kept verbatim so its predictions can be compared against the
    other two routes rather than silently trusted.

Monte Carlo loops run in fixed-size shards with one PRNG substream per
shard, merged in shard order by exact-count weighting, so results are
reproducible and shardable without changing the answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .linalg import DenseMatrix, ParamVector, norm_sq, outer
from .randomness import Direction, Distribution, make_generator

_SHARD = 1 << 17
ENUMERATION_MAX_DIM = 20


def project_direction(g: ParamVector, v: Direction | np.ndarray) -> ParamVector:
    """Rank-one reconstruction <v, g> v of a vector from its projection."""
    vec = v.values if isinstance(v, Direction) else np.asarray(v, dtype=np.float64)
    if vec.shape != g.shape:
        raise ValueError(f"dimension mismatch: {vec.shape} vs {g.shape}")
    return float(np.dot(vec, g)) * vec


def _direction_shards(
    dist: Distribution, d: int, count: int, seed: int, label: str
) -> Iterator[np.ndarray]:
    """Yield (shard_size, d) direction matrices in a fixed order."""
    produced = 0
    shard = 0
    while produced < count:
        size = min(_SHARD, count - produced)
        gen = make_generator(seed, f"{label}:shard:{shard}")
        if dist is Distribution.GAUSSIAN:
            yield gen.standard_normal((size, d))
        else:
            yield gen.integers(0, 2, size=(size, d)).astype(np.float64) * 2.0 - 1.0
        produced += size
        shard += 1


def _sign_pattern_shards(d: int) -> Iterator[np.ndarray]:
    """All 2^d Rademacher outcomes, low bit = coordinate 0, in index order."""
    total = 1 << d
    coords = np.arange(d, dtype=np.uint32)
    for lo in range(0, total, _SHARD):
        codes = np.arange(lo, min(lo + _SHARD, total), dtype=np.uint32)
        bits = (codes[:, None] >> coords) & 1
        yield bits.astype(np.float64) * 2.0 - 1.0


def mc_unbiasedness(
    g: ParamVector, dist: Distribution, sample_count: int, seed: int
) -> tuple[ParamVector, float]:
    """Monte Carlo mean of <v, g> v over fresh directions.

    Returns (mean estimate, max abs deviation from g).  The estimator is
    unbiased, so the deviation shrinks like 1/sqrt(sample_count); for the
    zero vector every term is exactly zero.
    """
    d = len(g)
    total = np.zeros(d)
    for v in _direction_shards(dist, d, sample_count, seed, f"mc-mean:{dist.value}"):
        total += v.T @ (v @ g)
    mean = total / sample_count
    return mean, float(np.abs(mean - g).max())


def mc_second_moment(
    g: ParamVector, dist: Distribution, sample_count: int, seed: int
) -> float:
    """Monte Carlo estimate of E[ ||<v, g> v||^2 ] / ||g||^2.

    The analytic value is d + 2 for Gaussian directions and exactly d for
    Rademacher ones; both sit under the dimension-free bound d + 4.
    """
    g_sq = norm_sq(g)
    if g_sq == 0.0:
        raise ValueError("second moment is undefined for the zero vector")
    d = len(g)
    total = 0.0
    for v in _direction_shards(dist, d, sample_count, seed, f"mc-m2:{dist.value}"):
        r = v @ g
        total += float((r * r) @ (v * v).sum(axis=1))
    return total / sample_count / g_sq


def exact_rademacher_second_moment(g: ParamVector) -> float:
    """E[ ||<v, g> v||^2 ] / ||g||^2 by enumerating all 2^d sign patterns.

    Every Rademacher direction has ||v||^2 == d exactly, so this equals
    d * E[<v, g>^2] / ||g||^2 and must come out to d.
    """
    d = len(g)
    if d > ENUMERATION_MAX_DIM:
        raise ValueError(f"enumeration supports d <= {ENUMERATION_MAX_DIM}, got {d}")
    g_sq = norm_sq(g)
    if g_sq == 0.0:
        raise ValueError("second moment is undefined for the zero vector")
    total = 0.0
    for v in _sign_pattern_shards(d):
        r = v @ g
        total += float(r @ r) * d
    return total / (1 << d) / g_sq


@dataclass
class VarianceReport:
    """First and second moments of the averaged server update.

    ``covariance`` is exactly ``second_moment - outer(mean, mean)`` and is
    symmetrized, so its trace can only dip below zero by rounding.  For
    Monte Carlo reports, ``mean_se`` and ``second_moment_se`` carry the
    per-entry standard errors of the estimates; exact enumerations set
    ``sample_count`` to "exact" and the errors to None.
    """

    dist: Distribution
    sample_count: int | str
    mean: ParamVector
    second_moment: DenseMatrix
    covariance: DenseMatrix
    mean_se: ParamVector | None = None
    second_moment_se: DenseMatrix | None = None

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))

    def covariance_tolerance(self, sigmas: float) -> DenseMatrix:
        """Elementwise k-sigma band for the covariance, via the delta method."""
        if self.mean_se is None or self.second_moment_se is None:
            raise ValueError("exact reports carry no Monte Carlo error")
        cross = (
            np.abs(self.mean)[:, None] * self.mean_se[None, :]
            + np.abs(self.mean)[None, :] * self.mean_se[:, None]
        )
        return sigmas * (self.second_moment_se + cross)


def _moments_from_shards(
    deltas: Sequence[ParamVector],
    shards: Iterator[np.ndarray],
    count: int,
    dist: Distribution,
    exact: bool,
) -> VarianceReport:
    """Accumulate moments of d_x = (1/N) (sum_n <delta_n, v>) v over shards."""
    stack = np.stack([np.asarray(d, dtype=np.float64) for d in deltas])
    n_clients, d = stack.shape
    total_drift = stack.sum(axis=0)

    sum_u = np.zeros(d)
    sum_uu = np.zeros((d, d))
    sum_uu_sq = np.zeros((d, d))
    for v in shards:
        s = (v @ total_drift) / n_clients
        u = v * s[:, None]
        sum_u += u.sum(axis=0)
        sum_uu += u.T @ u
        if not exact:
            u_sq = u * u
            sum_uu_sq += u_sq.T @ u_sq

    mean = sum_u / count
    second = sum_uu / count
    second = (second + second.T) / 2.0
    covariance = second - outer(mean, mean)

    mean_se = second_se = None
    if not exact:
        var_u = np.maximum(np.diag(second) - mean * mean, 0.0)
        mean_se = np.sqrt(var_u / count)
        var_uu = np.maximum(sum_uu_sq / count - second * second, 0.0)
        second_se = np.sqrt(var_uu / count)

    return VarianceReport(
        dist=dist,
        sample_count="exact" if exact else count,
        mean=mean,
        second_moment=second,
        covariance=covariance,
        mean_se=mean_se,
        second_moment_se=second_se,
    )


def _check_deltas(deltas: Sequence[ParamVector]) -> tuple[int, int]:
    if len(deltas) == 0:
        raise ValueError("need at least one client drift")
    dims = {len(d) for d in deltas}
    if len(dims) != 1:
        raise ValueError(f"client drifts disagree on dimension: {sorted(dims)}")
    return len(deltas), dims.pop()


def mc_update_moments(
    deltas: Sequence[ParamVector],
    dist: Distribution,
    sample_count: int,
    seed: int,
) -> VarianceReport:
    """Monte Carlo moments of the averaged update for frozen client drifts."""
    _, d = _check_deltas(deltas)
    shards = _direction_shards(
        dist, d, sample_count, seed, f"mc-update:{dist.value}"
    )
    return _moments_from_shards(deltas, shards, sample_count, dist, exact=False)


def exact_rademacher_moments(deltas: Sequence[ParamVector]) -> VarianceReport:
    """Exact moments of the averaged update under Rademacher directions.

    Enumerates all 2^d equiprobable sign patterns; d is capped at
    ENUMERATION_MAX_DIM to keep runs around a second.
    """
    _, d = _check_deltas(deltas)
    if d > ENUMERATION_MAX_DIM:
        raise ValueError(f"enumeration supports d <= {ENUMERATION_MAX_DIM}, got {d}")
    return _moments_from_shards(
        deltas, _sign_pattern_shards(d), 1 << d, Distribution.RADEMACHER, exact=True
    )


def closed_form_covariance(
    deltas: Sequence[ParamVector], dist: Distribution
) -> DenseMatrix:
    """The documented closed-form covariance of the averaged update.

        (2/N^2) sum_n delta_n delta_n^T
      + (c/N^2) sum_n ||delta_n||^2 I      (c = 4 Gaussian, c = 2 Rademacher)
      - delta_bar delta_bar^T

    Kept verbatim as stated; the verification suite compares it against the
    Monte Carlo and enumeration oracles and reports any gap instead of
    assuming agreement.  By construction the Gaussian and Rademacher
    expressions differ by exactly (2/N^2) sum_n ||delta_n||^2 I.
    """
    n_clients, d = _check_deltas(deltas)
    stack = np.stack([np.asarray(v, dtype=np.float64) for v in deltas])
    sum_outer = stack.T @ stack
    sum_norm_sq = float((stack * stack).sum())
    mean_delta = stack.mean(axis=0)
    # The Gaussian coefficient is an exact doubling of the Rademacher one, so
    # the two expressions differ by exactly (2/N^2) sum||delta||^2 I.
    identity_term = (2.0 / n_clients**2) * sum_norm_sq
    if dist is Distribution.GAUSSIAN:
        identity_term *= 2.0
    return (
        (2.0 / n_clients**2) * sum_outer
        + identity_term * np.eye(d)
        - outer(mean_delta, mean_delta)
    )
