"""Data-coverage measurement on the unit hypercube.

A client's local dataset lives in the unit feature space [0, 1]^d.  How
much of that space the dataset "covers" is measured in two steps:

* radius coverage ``mu(A, eps)``: the measure of the unit cube that lies
  strictly within distance ``eps`` of at least one dataset point, i.e.
  the measure of the cube intersected with the union of open balls of
  radius ``eps`` around the points;
* coverage quality ``theta(A) = (1/sqrt(d)) * integral_0^sqrt(d) mu(A, eps) d(eps)``,
  a scalar in [0, 1] that serves as the client's hidden quality type.

The radius coverage is estimated by Monte Carlo (exact union-of-balls
volume is intractable beyond d = 3) and the integral by a composite
trapezoid rule.  One common sample set is shared across all radii of a
quality evaluation: each sample's nearest-point distance is computed
once and thresholded per radius, which makes the per-sample coverage
indicator exactly monotone in the radius and costs O(samples * points)
instead of O(samples * points * steps).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .seeding import as_generator


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Finite sample set in [0, 1]^d.  May be empty."""

    dimension: int
    points: np.ndarray

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.dimension)
        if pts.ndim != 2 or pts.shape[1] != self.dimension:
            raise ValueError(
                f"points must have shape (n, {self.dimension}), got {pts.shape}"
            )
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValueError("every coordinate must lie in [0, 1]")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.points)

    def nearest_distances(self, queries: np.ndarray) -> np.ndarray:
        """Euclidean distance from each query point to its nearest cloud point."""
        if self.is_empty:
            raise ValueError("empty cloud has no nearest distances")
        dist, _ = self._tree.query(np.asarray(queries, dtype=float), k=1)
        return np.atleast_1d(dist)

    def to_csv(self, path: str | Path) -> None:
        """One point per row, header x1..xd."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{k + 1}" for k in range(self.dimension)])
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PointCloud":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            dimension = len(header)
            rows = [[float(v) for v in row] for row in reader if row]
        return cls(dimension=dimension, points=np.array(rows, dtype=float))


@dataclass(frozen=True)
class CoverageEstimate:
    """Monte Carlo estimate of the radius coverage mu(A, eps)."""

    value: float
    standard_error: float
    sample_count: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"value must lie in [0, 1], got {self.value}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")


def estimate_coverage(
    cloud: PointCloud,
    epsilon: float,
    samples: int,
    seed: int | np.random.Generator,
) -> CoverageEstimate:
    """Estimate the measure of [0,1]^d strictly within ``epsilon`` of the cloud.

    Draws ``samples`` uniform points and counts the fraction whose
    nearest-point distance is strictly below ``epsilon`` (open balls).
    Deterministic for a fixed seed; adding points to the cloud can only
    move samples closer, so the estimate is monotone under supersets at
    matched seeds.
    """
    diameter = math.sqrt(cloud.dimension)
    if not 0.0 <= epsilon <= diameter:
        raise ValueError(
            f"epsilon must lie in [0, sqrt(d)] = [0, {diameter:.6g}], got {epsilon}"
        )
    if samples < 1:
        raise ValueError("samples must be positive")
    if cloud.is_empty:
        return CoverageEstimate(0.0, 0.0, samples)
    rng = as_generator(seed)
    draws = rng.random((samples, cloud.dimension))
    dist = cloud.nearest_distances(draws)
    value = float(np.count_nonzero(dist < epsilon)) / samples
    stderr = math.sqrt(value * (1.0 - value) / samples)
    return CoverageEstimate(value, stderr, samples)


def coverage_quality(
    cloud: PointCloud,
    radius_steps: int,
    samples: int,
    seed: int | np.random.Generator,
) -> float:
    """Normalized integral of the radius coverage over eps in [0, sqrt(d)].

    Composite trapezoid over ``radius_steps`` equally spaced radii, with a
    single shared sample set (size ``samples``) thresholded per radius.
    Returns a value in [0, 1]; 0 for the empty cloud.
    """
    if radius_steps < 2:
        raise ValueError("radius_steps must be >= 2")
    if samples < 1:
        raise ValueError("samples must be positive")
    if cloud.is_empty:
        return 0.0
    diameter = math.sqrt(cloud.dimension)
    radii = np.linspace(0.0, diameter, radius_steps)
    rng = as_generator(seed)
    draws = rng.random((samples, cloud.dimension))
    dist = np.sort(cloud.nearest_distances(draws))
    # count of samples with distance strictly below each radius
    hits = np.searchsorted(dist, radii, side="left")
    mu = hits / samples
    theta = float(np.trapezoid(mu, radii) / diameter)
    return min(max(theta, 0.0), 1.0)


def classify_type(theta: float, type_count: int) -> int:
    """Bucket a quality value into one of ``type_count`` contract types.

    Type i covers [ (i-1)/I, i/I ]; the shared endpoints are assigned to
    the higher bucket, except theta = 1 which maps to type I, so the map
    is total and weakly monotone on [0, 1].
    """
    if type_count < 1:
        raise ValueError("type_count must be positive")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    return min(type_count, int(math.floor(theta * type_count)) + 1)
