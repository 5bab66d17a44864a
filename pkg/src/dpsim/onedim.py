"""Noisy binary-tree histogram over [0, 1] and one-dimensional distance queries.

Points are rounded to the grid ``{0, 1/m, ..., 1}`` (``m`` defaults to the
dataset size ``n``), counted into ``m + 1`` leaves padded with zero leaves to a
power of two, and every node of the resulting complete binary tree gets
independent Laplace noise. An interval count sums the canonical dyadic nodes
covering it; a distance query sums geometrically shrinking interval counts
around the query, each weighted by the interval's outer distance.

Node storage is heap ordered: the root is ``node_values[0]`` and heap index
``h`` (1-based) lives at ``node_values[h - 1]``; leaf ``i`` has heap index
``P + i`` where ``P`` is the padded leaf count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dpsim.core import ParameterError, RngStream, as_rng, sample_laplace


@dataclass(frozen=True, eq=False)
class NoisyTree:
    """Released one-dimensional structure.

    Attributes:
      n: Number of private points (treated as public, as in the count-based
        range correction for out-of-range queries).
      grid_n: Grid resolution ``m``; leaves sit at multiples of ``1/m``.
      depth: ``log2`` of the padded leaf count.
      node_values: Noised node counts in heap order, length ``2 P - 1``.
      eta: Laplace scale added to every node (0 when ``noise_off``).
      epsilon: Privacy parameter the tree was built for.
      noise_off: True for test-only, non-private trees.
      scale: Domain radius ``R``; answers are multiplied by it (``R**p`` for
        the p-th power query).
    """

    n: int
    grid_n: int
    depth: int
    node_values: np.ndarray
    eta: float
    epsilon: float
    noise_off: bool = False
    scale: float = 1.0

    @property
    def n_leaves(self) -> int:
        return 1 << self.depth

    def leaf_values(self) -> np.ndarray:
        p = self.n_leaves
        return self.node_values[p - 1: 2 * p - 1]


@dataclass(frozen=True)
class Interval:
    """Half-open interval ``[lo, hi)`` in normalized coordinates.

    To include the right end point 1 pass ``hi = 1 + 1/m``; it rounds to the
    grid slot just past 1.
    """

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ParameterError(f"interval needs lo <= hi, got [{self.lo}, {self.hi})")


def grid_index(values, grid_n: int):
    """Nearest multiple of ``1/grid_n`` as an integer index; ties round up."""
    return np.floor(np.asarray(values, dtype=np.float64) * grid_n + 0.5).astype(np.int64)


def tree_shape(grid_n: int) -> tuple[int, int]:
    """``(depth, padded leaf count)`` for ``grid_n + 1`` grid positions."""
    depth = max(1, math.ceil(math.log2(grid_n + 1)))
    return depth, 1 << depth


def node_counts(values, grid_n: int) -> np.ndarray:
    """Exact (pre-noise) node counts in heap order."""
    depth, p = tree_shape(grid_n)
    idx = np.clip(grid_index(values, grid_n), 0, grid_n)
    heap = np.zeros(2 * p, dtype=np.float64)
    heap[p:] = np.bincount(idx, minlength=p)[:p]
    h = p
    while h > 1:
        half = h // 2
        heap[half:h] = heap[h:2 * h:2] + heap[h + 1:2 * h:2]
        h = half
    return heap[1:]


def build_tree(values, epsilon: float, rng: RngStream | int | None = None,
               noise_off: bool = False, *, grid_n: int | None = None,
               scale: float = 1.0) -> NoisyTree:
    """Build the epsilon-DP noisy tree over values already scaled into [0, 1].

    A replace-one change moves one unit of count between two leaves, touching
    two root-to-leaf paths of ``depth + 1`` nodes each, so the node vector has
    l1 sensitivity ``2 (depth + 1)`` and every node gets Laplace noise of scale
    ``eta = 2 (depth + 1) / epsilon``.

    Values outside [0, 1] are clipped to the boundary.
    """
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    x = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ParameterError("values must be finite")
    x = np.clip(x, 0.0, 1.0)
    n = int(x.size)
    m = int(grid_n) if grid_n is not None else max(n, 1)
    if m < 1:
        raise ParameterError(f"grid_n must be positive, got {grid_n}")
    depth, _ = tree_shape(m)
    counts = node_counts(x, m)
    if noise_off:
        eta = 0.0
        nodes = counts
    else:
        eta = 2.0 * (depth + 1) / epsilon
        nodes = counts + sample_laplace(eta, as_rng(rng), size=counts.shape)
    nodes.setflags(write=False)
    return NoisyTree(n=n, grid_n=m, depth=depth, node_values=nodes, eta=eta,
                     epsilon=float(epsilon), noise_off=bool(noise_off), scale=float(scale))


def decompose(tree: NoisyTree, lo: int, hi: int) -> list[int]:
    """Heap indices (1-based) of the canonical nodes covering leaves ``[lo, hi)``."""
    p = tree.n_leaves
    lo = min(max(int(lo), 0), tree.grid_n + 1)
    hi = min(max(int(hi), 0), tree.grid_n + 1)
    out = []
    l, r = lo + p, hi + p
    while l < r:
        if l & 1:
            out.append(l)
            l += 1
        if r & 1:
            r -= 1
            out.append(r)
        l >>= 1
        r >>= 1
    return out


def range_sums(tree: NoisyTree, lo, hi) -> np.ndarray:
    """Vectorised canonical-node sums for leaf ranges ``[lo, hi)``.

    Ranges are clamped to the real grid ``[0, grid_n]`` so padded leaves never
    contribute noise.
    """
    p = tree.n_leaves
    top = tree.grid_n + 1
    lo = np.clip(np.asarray(lo, dtype=np.int64), 0, top)
    hi = np.clip(np.asarray(hi, dtype=np.int64), 0, top)
    heap = np.concatenate(([0.0], tree.node_values, [0.0]))
    l = lo + p
    r = np.maximum(hi, lo) + p
    total = np.zeros(l.shape, dtype=np.float64)
    while True:
        active = l < r
        if not active.any():
            break
        take = active & ((l & 1) == 1)
        total += np.where(take, heap[np.where(take, l, 0)], 0.0)
        l = l + take
        take = active & ((r & 1) == 1)
        r = r - take
        total += np.where(take, heap[np.where(take, r, 0)], 0.0)
        l >>= 1
        r >>= 1
    return total


def noisy_count(tree: NoisyTree, q: Interval) -> float:
    """Noisy number of points in ``q``; endpoints snap to the nearest grid slot."""
    lo = int(grid_index(q.lo, tree.grid_n))
    hi = int(grid_index(q.hi, tree.grid_n))
    if lo >= hi:
        return 0.0
    return float(range_sums(tree, [lo], [hi])[0])


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")


def interval_plan(grid_n: int, centre, alpha: float, reach: int | None = None):
    """Leaf ranges and weights of the geometric decomposition around ``centre``.

    Right of the centre, ring ``j`` holds offsets in
    ``[b_{j+1}, b_j)`` with ``b_k = max(round(reach (1 + alpha)**-k), 1)`` and
    ``b_0 = infinity``; the left side mirrors it. The centre slot itself is in
    no ring, so points that round onto the query contribute zero.

    Args:
      grid_n: Grid resolution ``m``.
      centre: Integer grid index (or array of indices) of the query.
      alpha: Ring growth factor minus one.
      reach: Offset, in grid units, that the outermost ring starts from;
        defaults to ``grid_n``.

    Returns:
      ``(lo, hi, weights)``: ``lo`` and ``hi`` have shape ``centre.shape +
      (2 (J + 1),)`` with the right rings first; ``weights`` holds the
      normalized outer distance ``(reach / grid_n) (1 + alpha)**-j`` of each
      ring, and ``J = ceil(log_{1 + alpha} reach)``.
    """
    reach = grid_n if reach is None else int(reach)
    n_rings = max(0, math.ceil(math.log(reach) / math.log1p(alpha) - 1e-12)) + 1
    k = np.arange(n_rings + 1)
    b = np.maximum(np.floor(reach * (1.0 + alpha) ** (-k.astype(np.float64)) + 0.5), 1)
    b = b.astype(np.int64)
    c = np.asarray(centre, dtype=np.int64)[..., None]
    top = grid_n + 1
    r_lo = c + b[1:]
    r_hi = c + b[:-1]
    r_hi[..., 0] = top
    l_lo = c - b[:-1] + 1
    l_lo[..., 0] = 0
    l_hi = c - b[1:] + 1
    lo = np.concatenate([r_lo, l_lo], axis=-1)
    hi = np.concatenate([r_hi, l_hi], axis=-1)
    w = (reach / grid_n) * (1.0 + alpha) ** (-np.arange(n_rings, dtype=np.float64))
    return lo, hi, np.concatenate([w, w])


def _ring_sum(tree: NoisyTree, centre, alpha: float, power: float, reach=None):
    lo, hi, w = interval_plan(tree.grid_n, centre, alpha, reach)
    counts = range_sums(tree, lo, hi)
    return counts @ (w ** power)


def distance_query(tree: NoisyTree, y, alpha: float):
    """Approximate ``sum_x |x - y|`` in original units.

    ``y`` is in normalized coordinates (scalar or 1-d array). Queries outside
    [0, 1] are answered at the nearest boundary plus ``n * dist(y, [0, 1])``,
    which is exact for data inside the box. The normalized answer is
    multiplied by ``tree.scale``.
    """
    _check_alpha(alpha)
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y_arr)):
        raise ParameterError("query must be finite")
    flat = y_arr.ravel()
    clamped = np.clip(flat, 0.0, 1.0)
    centre = grid_index(clamped, tree.grid_n)
    value = _ring_sum(tree, centre, alpha, 1.0)
    value = value + tree.n * np.abs(flat - clamped)
    out = value * tree.scale
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)


def lp_distance_query(tree: NoisyTree, y, alpha: float, p: float):
    """Approximate ``sum_x |x - y|**p`` in original units.

    Runs the ring decomposition with growth ``alpha / p`` and ring weights
    raised to the ``p``-th power, then multiplies by ``tree.scale**p``. For
    ``p == 1`` this is exactly :func:`distance_query`. Queries outside [0, 1]
    widen the rings so the outermost one reaches the far end of the grid.
    """
    _check_alpha(alpha)
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    if p == 1:
        return distance_query(tree, y, alpha)
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y_arr)):
        raise ParameterError("query must be finite")
    flat = y_arr.ravel()
    m = tree.grid_n
    centre = grid_index(flat, m)
    reach = np.maximum(m, np.maximum(centre, m - centre))
    out = np.empty(flat.shape, dtype=np.float64)
    a = alpha / p
    for r in np.unique(reach):
        sel = reach == r
        out[sel] = _ring_sum(tree, centre[sel], a, float(p), int(r))
    out *= tree.scale ** p
    return float(out[0]) if y_arr.ndim == 0 else out.reshape(y_arr.shape)
