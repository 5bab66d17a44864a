"""Exact brute-force references and error reporting.

Distance sums use :func:`math.fsum` (exactly rounded summation), so the
oracle is at least as accurate as compensated summation. Everything here is
deterministic and uses no random streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from dpsim.core import ParameterError

DISTANCES = ("l1", "l2", "l2sq", "lpp")
KDE_KERNELS = ("gaussian", "exponential", "laplacian", "inv1p-l2", "inv1p-l2sq", "inv1p-l1")


def _as_points(dataset, y):
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[-1] != x.shape[1]:
        raise ParameterError(f"query dimension {y.shape[-1]} != data dimension {x.shape[1]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ParameterError("oracle inputs must be finite")
    return x, y


def _terms(x: np.ndarray, y: np.ndarray, f: str, p: float) -> np.ndarray:
    diff = x - y
    if f == "l1":
        return np.abs(diff).sum(axis=1)
    if f == "l2":
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if f == "l2sq":
        return np.einsum("ij,ij->i", diff, diff)
    if f == "lpp":
        return (np.abs(diff) ** p).sum(axis=1)
    raise ParameterError(f"unknown distance {f!r}; expected one of {DISTANCES}")


def exact_distance_sum(dataset, y, f: str = "l1", p: float = 1.0) -> float:
    """``sum_x f(x, y)`` for ``f`` in ``l1``, ``l2``, ``l2sq`` or ``lpp`` (with ``p``)."""
    x, y = _as_points(dataset, y)
    if y.ndim != 1:
        raise ParameterError("exact_distance_sum takes a single query; use exact_distance_sums")
    return math.fsum(_terms(x, y, f, p))


def exact_distance_sums(dataset, queries, f: str = "l1", p: float = 1.0) -> np.ndarray:
    x, q = _as_points(dataset, queries)
    q = np.atleast_2d(q)
    return np.array([math.fsum(_terms(x, row, f, p)) for row in q])


def kernel_values(kernel: str, diff: np.ndarray) -> np.ndarray:
    """Kernel evaluated on rows of ``x - y``."""
    if kernel in ("gaussian", "inv1p-l2sq"):
        h = np.einsum("...i,...i->...", diff, diff)
    elif kernel in ("exponential", "inv1p-l2"):
        h = np.sqrt(np.einsum("...i,...i->...", diff, diff))
    elif kernel in ("laplacian", "inv1p-l1"):
        h = np.abs(diff).sum(axis=-1)
    else:
        raise ParameterError(f"unknown kernel {kernel!r}; expected one of {KDE_KERNELS}")
    return 1.0 / (1.0 + h) if kernel.startswith("inv1p") else np.exp(-h)


def exact_kde(dataset, y, kernel: str) -> float:
    """``(1/n) sum_x k(x, y)``."""
    x, y = _as_points(dataset, y)
    if y.ndim != 1:
        raise ParameterError("exact_kde takes a single query; use exact_kdes")
    return math.fsum(kernel_values(kernel, x - y)) / x.shape[0]


def exact_kdes(dataset, queries, kernel: str) -> np.ndarray:
    x, q = _as_points(dataset, queries)
    q = np.atleast_2d(q)
    return np.array([math.fsum(kernel_values(kernel, x - row)) / x.shape[0] for row in q])


@dataclass(frozen=True)
class ErrorReport:
    """Errors of estimates ``Z`` against truths ``Z'``.

    ``M`` and ``A`` are the nonnegative least-squares fit of
    ``|Z - Z'| ~ (M - 1) Z' + A``.
    """

    abs_errors: np.ndarray
    mean_abs_error: float
    relative_error: float
    M: float
    A: float

    def to_dict(self) -> dict:
        return {"mean_abs_error": self.mean_abs_error, "relative_error": self.relative_error,
                "M": self.M, "A": self.A}


def error_report(estimates, truths) -> ErrorReport:
    """Summarize estimation error.

    ``relative_error`` is ``mean |Z - Z'| / mean Z'`` over queries with
    ``Z' > 0`` (0 when there are none).

    Raises:
      ParameterError: on empty or mismatched inputs.
    """
    z = np.asarray(estimates, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if z.size == 0:
        raise ParameterError("error_report needs at least one estimate")
    if z.shape != t.shape:
        raise ParameterError(f"{z.size} estimates vs {t.size} truths")
    err = np.abs(z - t)
    pos = t > 0
    rel = float(err[pos].mean() / t[pos].mean()) if pos.any() else 0.0
    design = np.column_stack([np.abs(t), np.ones_like(t)])
    (m_minus_1, a), _ = nnls(design, err)
    err.setflags(write=False)
    return ErrorReport(abs_errors=err, mean_abs_error=float(err.mean()), relative_error=rel,
                       M=1.0 + float(m_minus_1), A=float(a))
