"""Vector helpers and zone primitives used by the sampling-zone machinery.

Vectors are plain 1-D numpy float arrays. Everything here is a pure function;
randomness always comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-12


class GeometryError(ValueError):
    """Base class for geometric precondition failures."""


class DegenerateDimension(GeometryError):
    """No orthogonal direction exists (d = 1)."""


class ZeroRadius(GeometryError):
    """A rotation or zone was requested around a point coinciding with its center."""


class Converged(GeometryError):
    """Zero displacement between consecutive centroids; the iteration should stop."""


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise GeometryError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("vector has non-finite coordinates")
    return arr


def _check_dims(u: np.ndarray, v: np.ndarray) -> None:
    if u.shape != v.shape:
        raise GeometryError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")


def distance(u, v) -> float:
    """Euclidean distance between two vectors of the same dimension."""
    u, v = as_vector(u), as_vector(v)
    _check_dims(u, v)
    return float(np.linalg.norm(u - v))


def mean(points) -> np.ndarray:
    """Coordinate-wise mean of a non-empty set of points (rows)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] == 0:
        raise GeometryError("mean of an empty point set")
    return pts.mean(axis=0)


def random_orthonormal(axis, rng: np.random.Generator) -> np.ndarray:
    """Draw a unit vector orthogonal to ``axis``, uniform over the admissible sphere.

    A Gaussian sample is projected onto the orthogonal complement of ``axis``
    and normalized. Raises DegenerateDimension for d = 1.
    """
    axis = as_vector(axis)
    if axis.size < 2:
        raise DegenerateDimension("no orthogonal direction in one dimension")
    norm = np.linalg.norm(axis)
    if abs(norm - 1.0) > 1e-9:
        raise GeometryError(f"axis must be a unit vector (norm {norm!r})")
    axis = axis / norm
    while True:
        g = rng.standard_normal(axis.size)
        g -= g.dot(axis) * axis
        # second projection pass removes the residual rounding component
        g -= g.dot(axis) * axis
        n = np.linalg.norm(g)
        if n > 1e-8:
            return g / n


def rotate_about(center, point, angle: float, ortho) -> np.ndarray:
    """Rotate ``point`` around ``center`` by ``angle`` within the plane spanned by
    (point - center) and ``ortho``.

    The result keeps the distance to ``center``.
    """
    center, point, ortho = as_vector(center), as_vector(point), as_vector(ortho)
    _check_dims(center, point)
    _check_dims(center, ortho)
    offset = point - center
    rho = float(np.linalg.norm(offset))
    if rho == 0.0:
        raise ZeroRadius("point coincides with the rotation center")
    if not np.isfinite(angle):
        raise GeometryError("rotation angle must be finite")
    v_hat = offset / rho
    if abs(v_hat.dot(ortho)) > 1e-9 or abs(np.linalg.norm(ortho) - 1.0) > 1e-9:
        raise GeometryError("ortho must be a unit vector orthogonal to point - center")
    if angle == 0.0:
        return point.copy()
    return center + rho * (np.cos(angle) * v_hat + np.sin(angle) * ortho)


@dataclass(frozen=True)
class Ball:
    """Open Euclidean ball; membership excludes the boundary."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise GeometryError(f"negative radius {self.radius!r}")

    def contains(self, point) -> bool:
        return distance(point, self.center) < self.radius

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.asarray(points) - self.center, axis=1) < self.radius


@dataclass(frozen=True)
class SamplingFrame:
    """Local 2-D frame anchored at the current mean, pointing at the orientation controller.

    Attributes:
        origin: the real cluster mean the frame is anchored at.
        axis: unit direction from ``origin`` toward the controller.
        ortho: unit direction orthogonal to ``axis`` (None when d = 1).
        span: distance from ``origin`` to the controller.
    """

    origin: np.ndarray
    axis: np.ndarray
    ortho: np.ndarray | None
    span: float

    def point(self, delta, alpha) -> np.ndarray:
        """Map (distance ratio, angle) pairs to points; broadcasts over arrays."""
        delta = np.asarray(delta, dtype=float)[..., None]
        alpha = np.asarray(alpha, dtype=float)[..., None]
        direction = np.cos(alpha) * self.axis
        if self.ortho is not None:
            direction = direction + np.sin(alpha) * self.ortho
        return self.origin + delta * self.span * direction


def convergent_zone(s_prev, s_cur) -> Ball:
    """Open ball around the current mean whose radius is the last centroid displacement."""
    s_prev, s_cur = as_vector(s_prev), as_vector(s_cur)
    _check_dims(s_prev, s_cur)
    radius = float(np.linalg.norm(s_prev - s_cur))
    if radius == 0.0:
        raise Converged("centroid did not move")
    return Ball(s_cur, radius)
