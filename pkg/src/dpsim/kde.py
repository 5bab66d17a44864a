"""Private kernel density sketches from random Fourier features.

The sketch is the mean feature vector ``(1/n) sum_x phi(x)`` with Laplace
noise, where ``phi(x)_i = sqrt(2/D) cos(<w_i, x> + b_i)`` and
``E <phi(x), phi(y)> = k(x, y)``. A query is ``<noisy mean, phi(y)>``.

Supported kernels and their frequency laws:

========== ===================== =====================================
kernel     k(x, y)               frequencies
========== ===================== =====================================
gaussian   exp(-||x - y||_2^2)   N(0, 2 I)
exponential exp(-||x - y||_2)    multivariate Cauchy: g / |u|, g ~ N(0, I), u ~ N(0, 1)
laplacian  exp(-||x - y||_1)     i.i.d. standard Cauchy per coordinate
========== ===================== =====================================

Every feature lies in ``[-sqrt(2/D), sqrt(2/D)]``, so replacing one point
moves the mean by at most ``2 sqrt(2/D) / n`` per coordinate and by
``2 sqrt(2 D) / n`` in l1. That is the Laplace sensitivity used here.

Data may optionally pass through a public JL map first; feature and
projection seeds are drawn from the stream before the data is touched.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from dpsim.core import ParameterError, RngStream, as_rng, sample_laplace
from dpsim.projections import (DEFAULT_DIM_CONSTANT, ProjectionSpec, apply_projection,
                               choose_kde_projection_dim)

KERNELS = ("gaussian", "exponential", "laplacian")
FEATURE_CONSTANT = 8.0
# Calibrated gate: refuse to build when n < MIN_SIZE_CONSTANT / (alpha eps^2).
MIN_SIZE_CONSTANT = 100.0
QUERY_CLAMP = (-0.1, 1.1)
_CHUNK = 2048


@dataclass(frozen=True)
class FeatureMapSpec:
    kernel: str
    in_dim: int
    n_features: int
    seed: int

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ParameterError(f"unsupported kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.in_dim < 1 or self.n_features < 1:
            raise ParameterError("feature map dimensions must be positive")

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "in_dim": self.in_dim,
                "n_features": self.n_features, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureMapSpec:
        return cls(d["kernel"], int(d["in_dim"]), int(d["n_features"]), int(d["seed"]))


@functools.lru_cache(maxsize=64)
def frequencies(spec: FeatureMapSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(omega, phase)`` with ``omega`` of shape ``(in_dim, n_features)``."""
    gen = RngStream(spec.seed).generator
    d, big_d = spec.in_dim, spec.n_features
    if spec.kernel == "gaussian":
        omega = gen.standard_normal((d, big_d)) * math.sqrt(2.0)
    elif spec.kernel == "exponential":
        omega = gen.standard_normal((d, big_d)) / np.abs(gen.standard_normal(big_d))
    else:
        omega = gen.standard_cauchy((d, big_d))
    phase = gen.uniform(0.0, 2.0 * math.pi, size=big_d)
    omega.setflags(write=False)
    phase.setflags(write=False)
    return omega, phase


def rff_features(spec: FeatureMapSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ParameterError(f"expected dimension {spec.in_dim}, got {x.shape[-1]}")
    omega, phase = frequencies(spec)
    z = x @ omega
    z += phase
    np.cos(z, out=z)
    z *= math.sqrt(2.0 / spec.n_features)
    return z


def mean_features(spec: FeatureMapSpec, x: np.ndarray) -> np.ndarray:
    """``(1/n) sum_x phi(x)``, computed in row chunks and in place."""
    omega, phase = frequencies(spec)
    total = np.zeros(spec.n_features)
    for start in range(0, x.shape[0], _CHUNK):
        z = x[start:start + _CHUNK] @ omega
        z += phase
        np.cos(z, out=z)
        total += z.sum(axis=0)
    return total * (math.sqrt(2.0 / spec.n_features) / max(x.shape[0], 1))


def feature_count(alpha: float, c: float = FEATURE_CONSTANT) -> int:
    return math.ceil(c / alpha**2 - 1e-9)


def min_dataset_size(alpha: float, epsilon: float, c: float = MIN_SIZE_CONSTANT) -> int:
    return math.ceil(c / (alpha * epsilon**2) - 1e-9)


def feature_sensitivity(n_features: int, n: int) -> float:
    """l1 sensitivity of the mean feature vector under replace-one."""
    return 2.0 * math.sqrt(2.0 * n_features) / n


@dataclass(frozen=True, eq=False)
class DpKdeSketch:
    noisy_mean_features: np.ndarray
    spec: FeatureMapSpec
    projection: ProjectionSpec | None
    n: int
    epsilon: float
    alpha: float
    noise_scale: float = 0.0
    noise_off: bool = False

    @property
    def kernel(self) -> str:
        return self.spec.kernel

    @property
    def input_dim(self) -> int:
        return self.projection.in_dim if self.projection else self.spec.in_dim

    @property
    def internal_dim(self) -> int:
        return self.spec.in_dim


class DatasetTooSmall(ParameterError):
    """The dataset is below the size the accuracy guarantee needs."""


def _projection_for(kernel: str, alpha: float, d: int, kind: str, dim: int | None,
                    seed: int) -> ProjectionSpec | None:
    if dim is None:
        mode = "fast" if kind == "fast-jl" else "dense"
        dim = choose_kde_projection_dim(kernel, alpha, mode, DEFAULT_DIM_CONSTANT)
    if dim >= d:
        return None
    return ProjectionSpec(kind, d, int(dim), seed)


def build_kde(dataset, kernel: str, epsilon: float, alpha: float, use_projection: bool = False,
              rng: RngStream | int | None = None, *, noise_off: bool = False,
              n_features: int | None = None, projection_kind: str = "fast-jl",
              projection_dim: int | None = None, check_size: bool = True) -> DpKdeSketch:
    """Build an epsilon-DP KDE sketch.

    Args:
      dataset: ``(n, d)`` private points; bandwidth is 1, so callers rescale
        data to change it.
      kernel: One of ``gaussian``, ``exponential``, ``laplacian``.
      epsilon: Pure-DP budget of the whole sketch.
      alpha: Target additive error; sets ``D = ceil(8 / alpha^2)`` features
        unless ``n_features`` is given.
      use_projection: Project to ``choose_kde_projection_dim`` dimensions
        (or ``projection_dim``) first. Skipped when that would not reduce
        the dimension. Only the Gaussian and exponential kernels support it.
      rng: Master stream. Public seeds are drawn from it before the data is
        read; noise comes from ``rng.child(0)``.
      noise_off: Test-only; no noise is added.
      projection_kind: ``fast-jl`` (default) or ``gaussian-jl``.
      check_size: Enforce ``n >= MIN_SIZE_CONSTANT / (alpha epsilon^2)``.

    Raises:
      DatasetTooSmall: when ``check_size`` and ``n`` is below the bound.
      ParameterError: for an unknown kernel or bad parameters.
    """
    if kernel not in KERNELS:
        raise ParameterError(f"unsupported kernel {kernel!r}; expected one of {KERNELS}")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    rng = as_rng(rng)
    feature_seed = rng.derive_seed()
    projection_seed = rng.derive_seed()

    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ParameterError("dataset must be a non-empty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise ParameterError("dataset contains non-finite values")
    n, d = x.shape
    if check_size:
        need = min_dataset_size(alpha, epsilon)
        if n < need:
            raise DatasetTooSmall(
                f"n={n} is below the size gate n >= {MIN_SIZE_CONSTANT:g}/(alpha*eps^2) = {need} "
                f"for alpha={alpha}, eps={epsilon}")
    projection = None
    if use_projection:
        if kernel == "laplacian":
            raise ParameterError("the laplacian kernel has no dimensionality reduction")
        projection = _projection_for(kernel, alpha, d, projection_kind, projection_dim,
                                     projection_seed)
    if projection is not None:
        x = apply_projection(projection, x)
    big_d = int(n_features) if n_features is not None else feature_count(alpha)
    spec = FeatureMapSpec(kernel, x.shape[1], big_d, feature_seed)
    mean = mean_features(spec, x)
    scale = 0.0
    if not noise_off:
        scale = feature_sensitivity(big_d, n) / epsilon
        mean = mean + sample_laplace(scale, rng.child(0), size=big_d)
    mean.setflags(write=False)
    return DpKdeSketch(noisy_mean_features=mean, spec=spec, projection=projection, n=n,
                       epsilon=float(epsilon), alpha=float(alpha), noise_scale=scale,
                       noise_off=bool(noise_off))


def query_kde(sketch: DpKdeSketch, y, clamp: bool = True):
    """Estimate ``(1/n) sum_x k(x, y)`` for one query ``(d,)`` or a batch ``(q, d)``.

    Results are clamped to ``[-0.1, 1.1]`` unless ``clamp`` is False.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != sketch.input_dim:
        raise ParameterError(f"query dimension {y.shape[-1]} != sketch dimension {sketch.input_dim}")
    if sketch.projection is not None:
        y = apply_projection(sketch.projection, y)
    out = rff_features(sketch.spec, y) @ sketch.noisy_mean_features
    if clamp:
        out = np.clip(out, *QUERY_CLAMP)
    return float(out) if np.ndim(out) == 0 else out
