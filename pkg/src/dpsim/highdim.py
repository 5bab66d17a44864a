"""d-dimensional l1 and lp^p distance queries from per-coordinate trees.

``sum_x ||x - y||_p^p = sum_i sum_x |x_i - y_i|^p``, so one noisy tree per
coordinate answers the full query. The budget is split evenly for pure DP and
through advanced composition when ``delta > 0``. Each coordinate draws from
its own child stream, so builds are reproducible and coordinates independent.

The l2 distance query rides on the same machinery after an oblivious l2 -> l1
embedding (:func:`build_l2` / :func:`query_l2`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpsim.core import (DomainPromise, ParameterError, PrivacyBudget, RngStream, as_rng,
                        normalize_domain, split_budget)
from dpsim.onedim import NoisyTree, build_tree, distance_query, lp_distance_query
from dpsim.projections import L2Embedding, embed_l2_dataset


@dataclass(frozen=True, eq=False)
class L1Structure:
    trees: tuple[NoisyTree, ...]
    budget: PrivacyBudget
    per_tree_epsilon: float
    promise: DomainPromise
    alpha: float
    p: float = 1.0
    clip_count: int = 0

    @property
    def dim(self) -> int:
        return len(self.trees)

    @property
    def noise_off(self) -> bool:
        return all(t.noise_off for t in self.trees)


def build_l1(dataset, budget: PrivacyBudget, alpha: float, promise: DomainPromise,
             p: float = 1.0, rng: RngStream | int | None = None,
             noise_off: bool = False) -> L1Structure:
    """Build ``d`` coordinate trees, each at the split per-tree epsilon.

    Args:
      dataset: ``(n, d)`` array inside the box promise (clipped otherwise).
      budget: Total budget; ``delta > 0`` switches to advanced composition.
      alpha: Multiplicative accuracy knob in (0, 1), stored for queries.
      promise: Public ``box`` promise of side ``R``.
      p: Power of the distance the structure will answer (1 for l1).
      rng: Master stream; coordinate ``i`` uses ``rng.child(i)``.
      noise_off: Test-only; releases exact counts.
    """
    if promise.kind != "box":
        raise ParameterError("build_l1 needs a box promise")
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    x = np.asarray(dataset, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] == 0:
        raise ParameterError("dataset dimension must be positive")
    norm = normalize_domain(x, promise)
    d = promise.dim
    eps_tree = split_budget(budget, d)
    rng = as_rng(rng)
    trees = tuple(
        build_tree(norm.points[:, i], eps_tree, rng.child(i), noise_off, scale=norm.scale)
        for i in range(d)
    )
    return L1Structure(trees=trees, budget=budget, per_tree_epsilon=eps_tree,
                       promise=promise, alpha=float(alpha), p=float(p),
                       clip_count=norm.clip_count)


def _queries(structure: L1Structure, y):
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = y[None, :] if single else y
    if y2.ndim != 2 or y2.shape[1] != structure.dim:
        raise ParameterError(f"query dimension {y.shape[-1]} != structure dimension {structure.dim}")
    if not np.all(np.isfinite(y2)):
        raise ParameterError("query must be finite")
    return y2 / structure.promise.radius, single


def query_l1(structure: L1Structure, y):
    """Sum of the per-coordinate distance queries, in original units."""
    yn, single = _queries(structure, y)
    total = np.zeros(yn.shape[0])
    for i, tree in enumerate(structure.trees):
        total += distance_query(tree, yn[:, i], structure.alpha)
    return float(total[0]) if single else total


def query_lpp(structure: L1Structure, y, p: float | None = None):
    """Approximate ``sum_x ||x - y||_p^p``; ``p`` must match the build."""
    p = structure.p if p is None else float(p)
    if p != structure.p:
        raise ParameterError(f"structure was built for p={structure.p}, queried with p={p}")
    yn, single = _queries(structure, y)
    total = np.zeros(yn.shape[0])
    for i, tree in enumerate(structure.trees):
        total += lp_distance_query(tree, yn[:, i], structure.alpha, p)
    return float(total[0]) if single else total


@dataclass(frozen=True, eq=False)
class L2Structure:
    """l1 structure over the embedded data plus the public embedding."""

    embedding: L2Embedding
    l1: L1Structure

    @property
    def noise_off(self) -> bool:
        return self.l1.noise_off


def build_l2(dataset, budget: PrivacyBudget, alpha: float, promise: DomainPromise,
             rng: RngStream | int | None = None, noise_off: bool = False,
             out_dim: int | None = None) -> L2Structure:
    rng = as_rng(rng)
    emb = embed_l2_dataset(dataset, alpha, promise, rng.child(0), out_dim=out_dim)
    l1 = build_l1(emb.points, budget, alpha, emb.promise, 1.0, rng.child(1), noise_off)
    # the embedding's points are data-derived; keep only what queries need
    public = L2Embedding(spec=emb.spec, clip=emb.clip, points=np.empty((0, emb.spec.out_dim)),
                         promise=emb.promise, clip_count=emb.clip_count)
    return L2Structure(embedding=public, l1=l1)


def query_l2(structure: L2Structure, y):
    """Approximate ``sum_x ||x - y||_2``."""
    return query_l1(structure.l1, structure.embedding.embed_queries(y))
