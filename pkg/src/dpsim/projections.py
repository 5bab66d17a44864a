"""Oblivious random linear maps.

All maps are functions of ``(kind, in_dim, out_dim, seed)`` alone, so
publishing them costs no privacy. Three kinds are supported:

* ``gaussian-jl``: dense ``k x d`` matrix with N(0, 1/k) entries.
* ``fast-jl``: subsampled randomized Hadamard transform. The input is padded
  to a power of two, multiplied by random signs, Hadamard transformed, ``k``
  coordinates are sampled and the result is scaled by ``1/sqrt(k)``.
* ``l2-to-l1``: dense Gaussian matrix scaled by ``1/(beta k)`` with
  ``beta = sqrt(2/pi)``, so that ``||T x||_1`` concentrates around ``||x||_2``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard

from dpsim.core import DomainPromise, ParameterError, RngStream, as_rng

KINDS = ("gaussian-jl", "fast-jl", "l2-to-l1")
BETA = math.sqrt(2.0 / math.pi)
MIN_DIM = 8
DEFAULT_DIM_CONSTANT = 8.0
DEFAULT_CLIP_CONSTANT = 4.0

# Largest Hadamard block multiplied densely; bigger transforms are factored
# into Kronecker products of such blocks.
_MAX_BLOCK_BITS = 7
# Rows per fast-JL batch are capped so a batch spans about 4 MB of float64,
# which keeps the transform's intermediates in cache.
_FAST_JL_BATCH_VALUES = 1 << 19


@dataclass(frozen=True)
class ProjectionSpec:
    kind: str
    in_dim: int
    out_dim: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown projection kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ParameterError("projection dimensions must be positive")

    @property
    def padded_dim(self) -> int:
        return 1 << max(0, math.ceil(math.log2(self.in_dim)))

    @property
    def scaling(self) -> float:
        if self.kind == "l2-to-l1":
            return 1.0 / (BETA * self.out_dim)
        return 1.0 / math.sqrt(self.out_dim)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> ProjectionSpec:
        return cls(d["kind"], int(d["in_dim"]), int(d["out_dim"]), int(d["seed"]))


@functools.lru_cache(maxsize=32)
def _materialize(spec: ProjectionSpec):
    gen = RngStream(spec.seed).generator
    if spec.kind == "fast-jl":
        dp = spec.padded_dim
        signs = gen.integers(0, 2, size=dp).astype(np.float64) * 2.0 - 1.0
        # sorted rows keep the final gather cache friendly; order is immaterial
        rows = np.sort(gen.choice(dp, size=spec.out_dim, replace=spec.out_dim > dp))
        signs.setflags(write=False)
        rows.setflags(write=False)
        return signs, rows
    mat = gen.standard_normal((spec.out_dim, spec.in_dim)) * spec.scaling
    mat.setflags(write=False)
    return mat


def make_projection(kind: str, in_dim: int, out_dim: int,
                    rng: RngStream | int | None = None) -> ProjectionSpec:
    """New spec with a seed drawn from ``rng`` (no data involved)."""
    return ProjectionSpec(kind, int(in_dim), int(out_dim), as_rng(rng).derive_seed())


def _block_bits(bits: int) -> list[int]:
    parts = max(1, math.ceil(bits / _MAX_BLOCK_BITS))
    base, extra = divmod(bits, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


@functools.lru_cache(maxsize=16)
def _hadamard_block(size: int) -> np.ndarray:
    return hadamard(size).astype(np.float64)


def hadamard_transform(x) -> np.ndarray:
    """Unnormalized Sylvester-Hadamard transform along the last axis.

    Uses ``H_{2^(a+b)} = H_{2^a} (x) H_{2^b}``: viewing a row as a
    ``2^a x 2^b`` matrix ``M``, the transform is ``H_{2^a} M H_{2^b}``. Blocks
    are at most ``2^7`` wide; longer inputs recurse on the leading factor.
    The cost is ``O(d * sum(block sizes))`` instead of ``O(d^2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    bits = int(round(math.log2(n)))
    if 1 << bits != n:
        raise ParameterError(f"Hadamard length must be a power of two, got {n}")
    if bits == 0:
        return x.copy()
    return _fwht(x.reshape(-1, n), bits).reshape(x.shape)


def _fwht(rows: np.ndarray, bits: int) -> np.ndarray:
    parts = _block_bits(bits)
    if len(parts) == 1:
        return rows @ _hadamard_block(1 << bits)
    b = parts[-1]
    a = bits - b
    m = rows.reshape(-1, 1 << a, 1 << b) @ _hadamard_block(1 << b)
    if a <= _MAX_BLOCK_BITS:
        m = np.matmul(_hadamard_block(1 << a), m)
    else:
        # H is symmetric, so transforming the leading factor is a transpose away
        t = np.ascontiguousarray(m.transpose(0, 2, 1)).reshape(-1, 1 << a)
        m = _fwht(t, a).reshape(-1, 1 << b, 1 << a).transpose(0, 2, 1)
    return m.reshape(rows.shape)


def apply_projection(spec: ProjectionSpec, x) -> np.ndarray:
    """Map ``x`` of shape ``(d,)`` or ``(n, d)`` to ``(k,)`` or ``(n, k)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ParameterError(f"expected dimension {spec.in_dim}, got {x.shape[-1]}")
    if spec.kind != "fast-jl":
        return x @ _materialize(spec).T
    signs, rows = _materialize(spec)
    dp = spec.padded_dim
    # scaling commutes with the transform, so it rides on the sign flip
    flip = signs[: spec.in_dim] * spec.scaling
    flat = x.reshape(-1, spec.in_dim)
    out = np.empty((flat.shape[0], spec.out_dim))
    step = max(1, _FAST_JL_BATCH_VALUES // dp)
    for start in range(0, flat.shape[0], step):
        batch = flat[start:start + step]
        scaled = np.zeros((batch.shape[0], dp))
        np.multiply(batch, flip, out=scaled[:, : spec.in_dim])
        np.take(hadamard_transform(scaled), rows, axis=-1, out=out[start:start + step])
    return out.reshape(x.shape[:-1] + (spec.out_dim,))


def dense_matrix(spec: ProjectionSpec) -> np.ndarray:
    """Explicit ``k x d`` matrix of any spec (the fast kind is multiplied out)."""
    if spec.kind != "fast-jl":
        return np.array(_materialize(spec))
    signs, rows = _materialize(spec)
    h = _hadamard_block(spec.padded_dim) if spec.padded_dim <= 4096 else None
    if h is None:
        raise ParameterError("dense form only available for padded_dim <= 4096")
    return (h[rows] * signs)[:, : spec.in_dim] * spec.scaling


def choose_kde_projection_dim(kernel: str, alpha: float, mode: str = "dense",
                              c: float = DEFAULT_DIM_CONSTANT) -> int:
    """Target dimension preserving kernel sums to accuracy ``alpha``.

    Exponential and Gaussian kernels use ``c ln(1/alpha) / alpha^2`` for a
    dense Gaussian map and ``c ln(1/alpha)^2 / alpha^2`` for the fast map.
    Cauchy-type kernels (``1/(1 + h)``) use ``c / alpha^2`` for either.
    The result is rounded up and never below 8.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if mode not in ("dense", "fast"):
        raise ParameterError(f"mode must be 'dense' or 'fast', got {mode!r}")
    if kernel in ("cauchy", "inv1p-l2", "inv1p-l2sq"):
        k = c / alpha**2
    elif kernel in ("gaussian", "exponential"):
        log = math.log(1.0 / alpha)
        k = c * (log if mode == "dense" else log * log) / alpha**2
    else:
        raise ParameterError(f"no dimensionality reduction for kernel {kernel!r}")
    return max(MIN_DIM, math.ceil(k - 1e-9))


@dataclass(frozen=True, eq=False)
class L2Embedding:
    """Public l2 -> l1 map plus the clip box the embedded data lives in.

    Embedded coordinates are clipped to ``[-clip, clip]`` and shifted by
    ``+clip``, so embedded data sits in the box ``[0, 2 clip]^k``.
    """

    spec: ProjectionSpec
    clip: float
    points: np.ndarray
    promise: DomainPromise
    clip_count: int

    def embed_queries(self, y) -> np.ndarray:
        """Embed queries with the same map; queries are shifted but not clipped."""
        return apply_projection(self.spec, y) + self.clip


def embedding_params(n: int, alpha: float, radius: float, c: float = DEFAULT_DIM_CONSTANT,
                     c_clip: float = DEFAULT_CLIP_CONSTANT) -> tuple[int, float]:
    """``(k, clip)`` for the l2 -> l1 embedding of ``n`` points."""
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    k = math.ceil(c * math.log(max(n, 2)) * math.log(1.0 / alpha) / alpha**2 - 1e-9)
    k = max(MIN_DIM, k)
    clip = c_clip * radius * math.sqrt(math.log(max(n, 2) * k)) / k
    return k, clip


def embed_l2_dataset(dataset, alpha: float, promise: DomainPromise,
                     rng: RngStream | int | None = None, *, c: float = DEFAULT_DIM_CONSTANT,
                     c_clip: float = DEFAULT_CLIP_CONSTANT,
                     out_dim: int | None = None) -> L2Embedding:
    """Embed an l2-ball dataset into a box so l1 distance sums estimate l2 ones.

    ``k = c ln(n) ln(1/alpha) / alpha^2`` unless ``out_dim`` is given; the
    clip level ``c_clip R sqrt(ln(n k)) / k`` depends only on public values.
    """
    if promise.kind != "l2-ball":
        raise ParameterError("embed_l2_dataset needs an l2-ball promise")
    spec_seed = as_rng(rng).derive_seed()
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != promise.dim:
        raise ParameterError(f"dataset must have shape (n, {promise.dim})")
    n = x.shape[0]
    k, clip = embedding_params(n, alpha, promise.radius, c, c_clip)
    if out_dim is not None:
        k = int(out_dim)
        clip = c_clip * promise.radius * math.sqrt(math.log(max(n, 2) * k)) / k
    spec = ProjectionSpec("l2-to-l1", promise.dim, k, spec_seed)
    norms = np.linalg.norm(x, axis=1)
    over = norms > promise.radius / 2.0
    x = x.copy()
    x[over] *= (promise.radius / 2.0) / norms[over][:, None]
    z = apply_projection(spec, x)
    clipped = np.clip(z, -clip, clip)
    count = int(np.count_nonzero(clipped != z))
    box = DomainPromise("box", 2.0 * clip, k)
    return L2Embedding(spec=spec, clip=clip, points=clipped + clip, promise=box,
                       clip_count=count)
