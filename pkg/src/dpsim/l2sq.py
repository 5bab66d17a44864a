"""Squared-Euclidean distance sums from a noisy mean and a noisy spread.

Uses ``sum_x ||x - y||^2 = sum_x ||x - mu||^2 + n ||y - mu||^2``. Both the
spread ``s = sum_x ||x - mu||^2`` and the mean ``mu`` are released with the
Laplace mechanism, each at half the budget.

Sensitivities under replace-one in ``[0, R]^d``:

* mean: each coordinate moves by at most ``R/n``, so the l1 sensitivity is
  ``R d / n``.
* spread: writing ``s = s' + ((n-1)/n) (x - m')^2`` per coordinate, where
  ``s'`` and ``m'`` describe the other ``n-1`` points, replacing ``x`` changes
  each coordinate's term by at most ``((n-1)/n) R^2``. The total is at most
  ``SPREAD_SENSITIVITY_CONSTANT * R^2 d`` with the constant equal to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpsim.core import DomainPromise, ParameterError, RngStream, as_rng, sample_laplace

SPREAD_SENSITIVITY_CONSTANT = 1.0


@dataclass(frozen=True, eq=False)
class NoisyMoments:
    noisy_mean: np.ndarray
    noisy_s: float
    n: int
    promise: DomainPromise
    epsilon: float
    mean_scale: float = 0.0
    spread_scale: float = 0.0
    noise_off: bool = False
    clip_count: int = 0

    @property
    def dim(self) -> int:
        return self.noisy_mean.shape[0]


def exact_moments(x: np.ndarray) -> tuple[np.ndarray, float]:
    mu = x.mean(axis=0)
    return mu, float(np.sum((x - mu) ** 2))


def build_l2sq(dataset, epsilon: float, promise: DomainPromise,
               rng: RngStream | int | None = None, noise_off: bool = False) -> NoisyMoments:
    """Release noisy (mean, spread) for the box promise ``[0, R]^d``.

    Raises:
      ParameterError: for fewer than two points, a non-box promise or a bad
        epsilon.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if promise.kind != "box":
        raise ParameterError("build_l2sq needs a box promise")
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ParameterError("need at least two points; the mean's sensitivity is unbounded below that")
    if x.shape[1] != promise.dim:
        raise ParameterError(f"dataset dimension {x.shape[1]} != promise dimension {promise.dim}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("dataset contains non-finite values")
    r = float(promise.radius)
    clipped = np.clip(x, 0.0, r)
    clip_count = int(np.count_nonzero(clipped != x))
    n, d = clipped.shape
    mu, s = exact_moments(clipped)
    half = epsilon / 2.0
    mean_scale = (r * d / n) / half
    spread_scale = SPREAD_SENSITIVITY_CONSTANT * r * r * d / half
    if not noise_off:
        rng = as_rng(rng)
        mu = mu + sample_laplace(mean_scale, rng.child(0), size=d)
        s = s + sample_laplace(spread_scale, rng.child(1))
    mu.setflags(write=False)
    return NoisyMoments(noisy_mean=mu, noisy_s=float(s), n=n, promise=promise,
                        epsilon=float(epsilon), mean_scale=0.0 if noise_off else mean_scale,
                        spread_scale=0.0 if noise_off else spread_scale,
                        noise_off=bool(noise_off), clip_count=clip_count)


def query_l2sq(moments: NoisyMoments, y):
    """``noisy_s + n ||y - noisy_mean||^2`` for one query or a batch."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != moments.dim:
        raise ParameterError(f"query dimension {y.shape[-1]} != {moments.dim}")
    diff = y - moments.noisy_mean
    out = moments.noisy_s + moments.n * np.einsum("...i,...i->...", diff, diff)
    return float(out) if np.ndim(out) == 0 else out
