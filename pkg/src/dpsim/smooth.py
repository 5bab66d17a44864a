"""Smooth kernels ``1/(1 + h(x, y))`` through sums of exponential kernels.

For ``x >= 1`` we approximate ``1/x`` by ``g(x) = sum_j w_j exp(-t_j x)``
with positive weights and nodes. Substituting ``x = 1 + h`` gives

    1/(1 + h) ~= sum_j (w_j exp(-t_j)) exp(-t_j h),

so one exponential-type KDE sketch per term, built on a rescaled copy of the
data, answers the smooth kernel. ``h`` maps to a sub-kernel as follows:

============ =========== ====================
kernel       sub-kernel  data scaling
============ =========== ====================
inv1p-l2     exponential ``t_j x``
inv1p-l2sq   gaussian    ``sqrt(t_j) x``
inv1p-l1     laplacian   ``t_j x``
============ =========== ====================

The approximation comes from the identity ``1/x = int exp(s - x e^s) ds``
discretized by the trapezoid rule in ``s``: node ``t_j = e^{s_j}`` and weight
``w_j = step * t_j``. The integrand is smooth and decays doubly exponentially
in ``s``, so the rule converges quickly; the node range is truncated to
``[alpha/4, ln(4/alpha)]``, which costs at most ``alpha/4`` on each side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dpsim.core import ParameterError, RngStream, as_rng
from dpsim.kde import (DatasetTooSmall, DpKdeSketch, MIN_SIZE_CONSTANT, build_kde,
                       feature_count, min_dataset_size, query_kde)
from dpsim.projections import ProjectionSpec, apply_projection, choose_kde_projection_dim

SMOOTH_KERNELS = {"inv1p-l2": "exponential", "inv1p-l2sq": "gaussian", "inv1p-l1": "laplacian"}
CANDIDATE_STEPS = (1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2)
CHECK_POINTS = 10_000


class ApproximationError(RuntimeError):
    """The exponential-sum construction failed its numeric sup check."""


@dataclass(frozen=True, eq=False)
class ExpSumApprox:
    weights: np.ndarray
    nodes: np.ndarray
    alpha: float
    step: float

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.exp(-np.multiply.outer(x, self.nodes)) @ self.weights
        return float(out) if out.ndim == 0 else out

    @property
    def n_terms(self) -> int:
        return int(self.nodes.size)

    @property
    def amplification(self) -> np.ndarray:
        """Per-term coefficients ``w_j exp(-t_j)`` applied to sub-sketch answers."""
        return self.weights * np.exp(-self.nodes)


def check_grid(alpha: float, points: int = CHECK_POINTS) -> np.ndarray:
    """Geometric grid on ``[1, max(1e6, 10/alpha^2)]``."""
    return np.geomspace(1.0, max(1e6, 10.0 / alpha**2), points)


def sup_error(approx: ExpSumApprox, grid=None) -> tuple[float, float]:
    """``(max |g(x) - 1/x|, argmax x)`` over ``grid``."""
    x = check_grid(approx.alpha) if grid is None else np.asarray(grid, dtype=np.float64)
    err = np.abs(approx(x) - 1.0 / x)
    i = int(np.argmax(err))
    return float(err[i]), float(x[i])


def _trapezoid(alpha: float, step: float) -> ExpSumApprox:
    s_lo, s_hi = math.log(alpha / 4.0), math.log(math.log(4.0 / alpha))
    count = max(1, math.ceil((s_hi - s_lo) / step - 1e-12))
    s = s_lo + step * np.arange(count + 1)
    nodes = np.exp(s)
    weights = step * nodes
    weights[0] *= 0.5
    weights[-1] *= 0.5
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return ExpSumApprox(weights=weights, nodes=nodes, alpha=float(alpha), step=step)


def exp_sum_approx(alpha: float) -> ExpSumApprox:
    """Fewest-term trapezoid approximation of ``1/x`` on ``x >= 1`` to accuracy ``alpha``.

    Steps are tried from coarse to fine; the first one whose sup error on
    :func:`check_grid` is at most ``alpha`` is returned.

    Raises:
      ParameterError: if ``alpha`` is outside ``(0, 1]``.
      ApproximationError: if no candidate step passes; names the worst ``x``.
    """
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    grid = check_grid(alpha)
    worst = (math.inf, math.nan)
    for step in CANDIDATE_STEPS:
        approx = _trapezoid(alpha, step)
        err, at = sup_error(approx, grid)
        if err <= alpha:
            return approx
        worst = min(worst, (err, at))
    raise ApproximationError(
        f"no step reached sup error {alpha}; best was {worst[0]:.3g} at x={worst[1]:.6g}")


@dataclass(frozen=True, eq=False)
class SmoothKdeSketch:
    sub_sketches: tuple[DpKdeSketch, ...]
    approx: ExpSumApprox
    kernel: str
    epsilon: float
    alpha: float
    projection: ProjectionSpec | None = None

    @property
    def sub_scales(self) -> np.ndarray:
        return data_scales(self.kernel, self.approx.nodes)

    @property
    def input_dim(self) -> int:
        if self.projection is not None:
            return self.projection.in_dim
        return self.sub_sketches[0].input_dim

    @property
    def noise_off(self) -> bool:
        return all(s.noise_off for s in self.sub_sketches)


def data_scales(kernel: str, nodes: np.ndarray) -> np.ndarray:
    return np.sqrt(nodes) if kernel == "inv1p-l2sq" else np.asarray(nodes)


def smooth_alpha(alpha: float) -> float:
    """Accuracy that the size gate is evaluated at: ``alpha / ln(1/alpha)``."""
    return alpha / max(math.log(1.0 / alpha), 1.0)


def build_smooth_kde(dataset, kernel: str, epsilon: float, alpha: float,
                     rng: RngStream | int | None = None, *, noise_off: bool = False,
                     n_features: int | None = None, use_projection: bool = True,
                     projection_kind: str = "gaussian-jl", projection_dim: int | None = None,
                     check_size: bool = True) -> SmoothKdeSketch:
    """Build an epsilon-DP sketch for ``1/(1 + h(x, y))``.

    Args:
      dataset: ``(n, d)`` private points.
      kernel: ``inv1p-l2``, ``inv1p-l2sq`` or ``inv1p-l1``.
      epsilon: Total budget; each of the ``J`` sub-sketches gets ``epsilon / J``.
      alpha: Target additive error; fixes the exponential sum and the
        default feature count ``ceil(8 / alpha^2)`` per sub-sketch.
      rng: Master stream. The projection seed is drawn first; sub-sketch
        ``j`` uses ``rng.child(j)``.
      use_projection: For the l2-type kernels, project to
        ``ceil(8 / alpha^2)`` dimensions first when that is smaller than ``d``.
        The l1 kernel is never projected.
      check_size: Enforce the size gate at accuracy ``alpha / ln(1/alpha)``.
    """
    if kernel not in SMOOTH_KERNELS:
        raise ParameterError(f"unsupported smooth kernel {kernel!r}; expected one of "
                             f"{tuple(SMOOTH_KERNELS)}")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    rng = as_rng(rng)
    projection_seed = rng.derive_seed()
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ParameterError("dataset must be a non-empty (n, d) array")
    n, d = x.shape
    if check_size:
        a = smooth_alpha(alpha)
        need = min_dataset_size(a, epsilon)
        if n < need:
            raise DatasetTooSmall(
                f"n={n} is below the size gate n >= {MIN_SIZE_CONSTANT:g}/(alpha'*eps^2) = {need} "
                f"with alpha' = alpha/ln(1/alpha) = {a:.4g}")
    approx = exp_sum_approx(alpha)
    projection = None
    if use_projection and kernel != "inv1p-l1":
        k = projection_dim or choose_kde_projection_dim(kernel, alpha)
        if k < d:
            projection = ProjectionSpec(projection_kind, d, int(k), projection_seed)
            x = apply_projection(projection, x)
    sub_kernel = SMOOTH_KERNELS[kernel]
    eps_sub = epsilon / approx.n_terms
    big_d = int(n_features) if n_features is not None else feature_count(alpha)
    subs = tuple(
        build_kde(x * scale, sub_kernel, eps_sub, alpha, False, rng.child(j),
                  noise_off=noise_off, n_features=big_d, check_size=False)
        for j, scale in enumerate(data_scales(kernel, approx.nodes))
    )
    return SmoothKdeSketch(sub_sketches=subs, approx=approx, kernel=kernel,
                           epsilon=float(epsilon), alpha=float(alpha), projection=projection)


def query_smooth_kde(sketch: SmoothKdeSketch, y):
    """``sum_j w_j exp(-t_j) query_kde(sub_j, scale_j y')`` for one query or a batch."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != sketch.input_dim:
        raise ParameterError(f"query dimension {y.shape[-1]} != sketch dimension {sketch.input_dim}")
    if sketch.projection is not None:
        y = apply_projection(sketch.projection, y)
    coef = sketch.approx.amplification
    total = np.zeros(y.shape[:-1])
    for c, scale, sub in zip(coef, sketch.sub_scales, sketch.sub_sketches):
        total = total + c * query_kde(sub, y * scale, clamp=False)
    return float(total) if np.ndim(total) == 0 else total
