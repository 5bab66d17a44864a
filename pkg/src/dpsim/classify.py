"""Nearest-noisy-mean classifier.

Each class releases its own :class:`~dpsim.l2sq.NoisyMoments`. Classes
partition the training set, so every class release may use the full budget
and the union is still private at that budget. A query goes to the class
whose noisy squared distance sum is smallest, which is the class with the
nearest noisy mean.

Features pass through an optional public JL map, are clipped to
``[-clip, clip]`` per coordinate and shifted into the box ``[0, 2 clip]``.
Queries get the same treatment.

Note:
  ``projection_dim`` and ``clip`` are hyper-parameters. Choosing them by
  looking at private data (for example with :func:`grid_search`) spends
  privacy that this module does not account for.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from dpsim.core import DomainPromise, ParameterError, PrivacyBudget, RngStream, as_rng
from dpsim.l2sq import NoisyMoments, build_l2sq
from dpsim.projections import ProjectionSpec, apply_projection


@dataclass(frozen=True, eq=False)
class DpClassifier:
    moments: tuple[NoisyMoments, ...]
    labels: np.ndarray
    budget: PrivacyBudget
    projection: ProjectionSpec | None
    clip: float
    input_dim: int

    @property
    def means(self) -> np.ndarray:
        """Noisy class means in the shifted internal coordinates."""
        return np.stack([m.noisy_mean for m in self.moments])

    @property
    def noise_off(self) -> bool:
        return all(m.noise_off for m in self.moments)

    def transform(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.input_dim:
            raise ParameterError(f"query dimension {y.shape[-1]} != {self.input_dim}")
        if self.projection is not None:
            y = apply_projection(self.projection, y)
        return np.clip(y, -self.clip, self.clip) + self.clip


def default_clip(promise: DomainPromise) -> float:
    """Half the promise radius: the box half-width, or the ball radius."""
    return promise.radius / 2.0


def fit_classifier(points, labels, budget: PrivacyBudget, promise: DomainPromise | None = None,
                   projection_dim: int | None = None, clip: float | None = None,
                   rng: RngStream | int | None = None, noise_off: bool = False,
                   projection_kind: str = "gaussian-jl") -> DpClassifier:
    """Fit one noisy-moments release per class.

    Args:
      points: ``(n, d)`` features.
      labels: ``(n,)`` integer labels.
      budget: Budget of every class release (not split across classes).
        Only ``epsilon`` is used; the releases are pure DP, which also
        satisfies any ``delta``.
      promise: Used for the default ``clip`` when ``clip`` is None.
      projection_dim: Optional JL target dimension.
      clip: Per-coordinate clip level after projection.
      rng: The projection seed is drawn first; class ``i`` (in sorted label
        order) draws noise from ``rng.child(i)``.

    Raises:
      ParameterError: if a class has fewer than two points or neither
        ``clip`` nor ``promise`` is given.
    """
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ParameterError("points must be (n, d) and labels (n,)")
    if not np.all(np.isfinite(x)):
        raise ParameterError("points contain non-finite values")
    if clip is None:
        if promise is None:
            raise ParameterError("give either clip or a promise to derive it from")
        clip = default_clip(promise)
    if not clip > 0:
        raise ParameterError(f"clip must be positive, got {clip}")
    rng = as_rng(rng)
    seed = rng.derive_seed()
    d = x.shape[1]
    projection = None
    if projection_dim is not None:
        projection = ProjectionSpec(projection_kind, d, int(projection_dim), seed)
        x = apply_projection(projection, x)
    x = np.clip(x, -clip, clip) + clip
    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    if np.any(counts < 2):
        bad = classes[counts < 2].tolist()
        raise ParameterError(f"classes {bad} have fewer than two points")
    box = DomainPromise("box", 2.0 * clip, x.shape[1])
    order = np.argsort(inverse, kind="stable")
    splits = np.split(order, np.cumsum(counts)[:-1])
    moments = tuple(
        build_l2sq(x[idx], budget.epsilon, box, rng.child(i), noise_off)
        for i, idx in enumerate(splits)
    )
    classes.setflags(write=False)
    return DpClassifier(moments=moments, labels=classes, budget=budget, projection=projection,
                        clip=float(clip), input_dim=d)


def predict(classifier: DpClassifier, y):
    """Label of the nearest noisy mean; ties go to the smallest label."""
    z = classifier.transform(y)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    means = classifier.means
    dist = (np.einsum("ij,ij->i", z2, z2)[:, None] - 2.0 * z2 @ means.T
            + np.einsum("ij,ij->i", means, means)[None, :])
    # argmin returns the first minimum, and labels are sorted ascending
    out = classifier.labels[np.argmin(dist, axis=1)]
    return out[0].item() if single else out


def accuracy(classifier: DpClassifier, points, labels) -> float:
    return float(np.mean(predict(classifier, points) == np.asarray(labels)))


def grid_search(train_points, train_labels, val_points, val_labels, budget: PrivacyBudget,
                projection_dims, clips, rng: RngStream | int | None = None):
    """Best ``(accuracy, projection_dim, clip)`` on a validation split.

    Warning:
      The search reads private data; its privacy cost is not accounted for.
    """
    rng = as_rng(rng)
    best = None
    for i, (k, c) in enumerate(itertools.product(projection_dims, clips)):
        clf = fit_classifier(train_points, train_labels, budget, projection_dim=k, clip=c,
                             rng=rng.child(i))
        acc = accuracy(clf, val_points, val_labels)
        if best is None or acc > best[0]:
            best = (acc, k, c)
    return best
