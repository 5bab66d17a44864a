"""Shared privacy and numeric primitives.

Laplace sampling, privacy budget splitting, public-domain normalization and
seeded random streams. Every structure in the package draws its noise through
:class:`RngStream` so builds are reproducible from a single master seed.

Neighbouring datasets follow the replace-one convention: two datasets of the
same size that differ in exactly one point. All sensitivity constants in the
package are stated for that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_U53 = float(2**53)


class ParameterError(ValueError):
    """Raised when a caller passes an out-of-range parameter."""


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) privacy budget. ``delta == 0`` means pure DP."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ParameterError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def pure(self) -> bool:
        return self.delta == 0.0


@dataclass(frozen=True)
class DomainPromise:
    """Public bound on where the private points live.

    ``kind="box"`` promises every point in ``[0, radius]^dim``. ``kind="l2-ball"``
    promises every point in the origin-centred Euclidean ball of *diameter*
    ``radius``.
    """

    kind: str
    radius: float
    dim: int

    def __post_init__(self):
        if self.kind not in ("box", "l2-ball"):
            raise ParameterError(f"unknown domain kind {self.kind!r}")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ParameterError(f"radius must be positive, got {self.radius}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError(f"dim must be a positive integer, got {self.dim}")


class RngStream:
    """Seeded, counter-based random stream.

    Backed by numpy's Philox generator keyed through a ``SeedSequence`` whose
    spawn key is ``(stream, *path)``. Identical ``(seed, stream, path)`` give
    bit-identical draws; distinct keys give independent streams. A stream is
    stateful and must not be shared between threads; use :meth:`child` to hand
    each worker its own.
    """

    def __init__(self, seed: int, stream: int = 0, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = int(stream)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self.path))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> RngStream:
        """Independent sub-stream; does not advance this stream."""
        return RngStream(self.seed, self.stream, self.path + (int(index),))

    def uniform_open(self, size=None):
        """Uniform draws strictly inside (0, 1), on the grid (k + 1/2) / 2**53."""
        k = self.generator.integers(0, 2**53, size=size, dtype=np.int64)
        return (k + 0.5) / _U53

    def derive_seed(self) -> int:
        """A fresh 63-bit seed for public, data-independent randomness."""
        return int(self.generator.integers(0, 2**63 - 1, dtype=np.int64))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, path={self.path})"


def as_rng(rng: RngStream | int | None) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(0 if rng is None else int(rng))


def laplace_from_uniform(scale: float, u):
    """Inverse-CDF transform of ``u`` in (0, 1) to a Laplace(0, scale) draw."""
    c = np.asarray(u, dtype=np.float64) - 0.5
    out = -scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))
    return float(out) if np.ndim(out) == 0 else out


def sample_laplace(scale: float, rng: RngStream, size=None):
    """Draw from Laplace(0, scale).

    Args:
      scale: Positive Laplace scale ``b``; the variance is ``2 b**2``.
      rng: Stream the uniforms are drawn from.
      size: Optional output shape; ``None`` returns a Python float.

    Raises:
      ParameterError: if ``scale`` is not positive.
    """
    if not (scale > 0 and math.isfinite(scale)):
        raise ParameterError(f"Laplace scale must be positive, got {scale}")
    return laplace_from_uniform(scale, rng.uniform_open(size))


def budget_split_pure(total: PrivacyBudget, k: int) -> float:
    """Per-part epsilon so that ``k`` pure mechanisms compose to ``total``."""
    if total.delta != 0:
        raise ParameterError("budget has delta > 0; use budget_split_advanced")
    if k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    return total.epsilon / k


def advanced_composition(eps0: float, delta: float, k: int) -> float:
    """Total epsilon of ``k`` independent ``eps0``-DP mechanisms at slack ``delta``."""
    return k * eps0 * eps0 / 2.0 + eps0 * math.sqrt(2.0 * k * math.log(1.0 / delta))


def budget_split_advanced(total: PrivacyBudget, k: int) -> float:
    """Largest per-part epsilon whose advanced composition over ``k`` parts is ``total``.

    Solves ``k e**2 / 2 + e * s = epsilon`` with ``s = sqrt(2 k ln(1/delta))``
    for its positive root, written in the cancellation-free form
    ``2 epsilon / (s + sqrt(s**2 + 2 k epsilon))``.
    """
    if not (0.0 < total.delta < 1.0):
        raise ParameterError(f"advanced composition needs 0 < delta < 1, got {total.delta}")
    if k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    s = math.sqrt(2.0 * k * math.log(1.0 / total.delta))
    return 2.0 * total.epsilon / (s + math.sqrt(s * s + 2.0 * k * total.epsilon))


def split_budget(total: PrivacyBudget, k: int) -> float:
    """Dispatch to the pure or advanced split depending on ``total.delta``."""
    if total.pure:
        return budget_split_pure(total, k)
    return budget_split_advanced(total, k)


@dataclass(frozen=True)
class NormalizedData:
    points: np.ndarray
    scale: float
    clip_count: int

    def denormalize(self, points=None):
        return (self.points if points is None else np.asarray(points)) * self.scale


def normalize_domain(dataset, promise: DomainPromise) -> NormalizedData:
    """Clip to the public promise, then divide by its radius.

    Box data lands in ``[0, 1]^d``; ball data lands in the ball of diameter 1.
    Clipping is silent; the number of clipped coordinates (box) or clipped
    rows (ball) is returned so builders can report it.
    """
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or (x.shape[0] and x.shape[1] != promise.dim):
        raise ParameterError(
            f"dataset has shape {x.shape}, promise expects dimension {promise.dim}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("dataset contains non-finite values")
    r = float(promise.radius)
    if promise.kind == "box":
        clipped = np.clip(x, 0.0, r)
        count = int(np.count_nonzero(clipped != x))
    else:
        norms = np.linalg.norm(x, axis=1)
        over = norms > r / 2.0
        clipped = x.copy()
        clipped[over] *= (r / 2.0) / norms[over][:, None]
        count = int(np.count_nonzero(over))
    return NormalizedData(points=clipped / r, scale=r, clip_count=count)
