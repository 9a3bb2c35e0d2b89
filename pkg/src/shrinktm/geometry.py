"""Maximin ordering, length scales and nearest previously-ordered neighbors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

M_MAX = 30

DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b)


def as_locations(coords) -> np.ndarray:
    """Validate a coordinate array and return it as an (N, dim) float array."""
    x = np.asarray(coords, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] not in (1, 2, 3):
        raise ValueError(f"locations must be (N, dim) with dim in 1..3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("locations contain non-finite coordinates")
    return x


@dataclass(frozen=True)
class Ordering:
    """Result of :func:`maximin_order`.

    ``perm[i]`` is the original index of the i-th ordered location, so
    ``coords[perm]`` are the locations in maximin order. ``neighbors[i, :k]``
    lists (in ordered indexing) the ``k = min(i, m_max)`` nearest earlier
    locations by ascending distance; unused slots hold -1.
    """

    perm: np.ndarray
    scales: np.ndarray
    neighbors: np.ndarray
    coords: np.ndarray  # already permuted into maximin order
    m_max: int = M_MAX
    inverse_perm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        object.__setattr__(self, "inverse_perm", inv)
        for a in (self.perm, self.scales, self.neighbors, self.coords, inv):
            a.setflags(write=False)

    @property
    def size(self) -> int:
        return self.perm.size

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def counts(self, m: Optional[int] = None) -> np.ndarray:
        """Number of conditioning neighbors per ordered index for set size m."""
        m = self.m_max if m is None else m
        return np.minimum(np.arange(self.size), m)

    def to_ordered(self, values: np.ndarray) -> np.ndarray:
        """Reorder the last axis from original (file) order to maximin order."""
        return np.asarray(values)[..., self.perm]

    def to_original(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., self.inverse_perm]

    def to_original_coords(self) -> np.ndarray:
        return self.coords[self.inverse_perm]


def _check_distinct(d: np.ndarray):
    n = d.shape[0]
    off = d + np.diag(np.full(n, np.inf))
    if np.any(off <= 0.0):
        raise ValueError("degenerate locations: duplicate points")


def maximin_order(coords, first: Optional[int] = None, m_max: int = M_MAX,
                  distance: DistanceFn = euclidean) -> Ordering:
    """Greedy exact maximin ordering.

    The first location defaults to the one nearest the coordinate centroid.
    Ties are broken by the lowest original index. ``scales[0]`` is set to the
    maximal pairwise distance so that it dominates every later scale.
    """
    x = as_locations(coords)
    n = x.shape[0]
    if first is not None and not 0 <= first < n:
        raise ValueError(f"first index {first} out of range for {n} locations")
    if m_max < 1:
        raise ValueError("m_max must be at least 1")

    d = distance(x, x)
    _check_distinct(d)

    if first is None:
        centroid = x.mean(axis=0, keepdims=True)
        first = int(np.argmin(distance(centroid, x)[0]))

    perm = np.empty(n, dtype=np.int64)
    scales = np.empty(n)
    perm[0] = first
    scales[0] = d.max() if n > 1 else 1.0
    mind = d[first].copy()
    mind[first] = -np.inf
    for j in range(1, n):
        nxt = int(np.argmax(mind))  # first maximum = lowest index
        perm[j] = nxt
        scales[j] = mind[nxt]
        np.minimum(mind, d[nxt], out=mind)
        mind[nxt] = -np.inf

    xo = x[perm]
    dord = d[np.ix_(perm, perm)]
    neighbors = np.full((n, m_max), -1, dtype=np.int64)
    for i in range(1, n):
        k = min(i, m_max)
        # stable sort keeps lower ordered index first among equal distances
        idx = np.argsort(dord[i, :i], kind="stable")[:k]
        neighbors[i, :k] = idx
    return Ordering(perm=perm, scales=scales, neighbors=neighbors, coords=xo, m_max=m_max)


def neighbor_sets(ordering: Ordering, m: int) -> list[np.ndarray]:
    """Conditioning sets g_m(i): the first min(m, i) neighbors of each index."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > ordering.m_max:
        raise ValueError(f"m={m} exceeds the stored neighbor lists (m_max={ordering.m_max})")
    k = ordering.counts(m)
    return [ordering.neighbors[i, :k[i]].copy() for i in range(ordering.size)]


def grid_locations(nx: int, ny: Optional[int] = None, extent=(0.0, 1.0)) -> np.ndarray:
    """Regular nx-by-ny grid on a square, row-major (x varies fastest)."""
    ny = nx if ny is None else ny
    if nx < 1 or ny < 1 or nx * ny < 2:
        raise ValueError("grid needs at least two points")
    lo, hi = extent
    gx = np.linspace(lo, hi, nx)
    gy = np.linspace(lo, hi, ny)
    xx, yy = np.meshgrid(gx, gy)
    return np.column_stack([xx.ravel(), yy.ravel()])


def scale_decay_slope(scales: np.ndarray, lo: int = 10, hi: Optional[int] = None) -> float:
    """Least-squares slope of log scale against log (1-based) index over [lo, hi]."""
    hi = scales.size if hi is None else hi
    i = np.arange(lo, hi + 1)
    return float(np.polyfit(np.log(i), np.log(scales[i - 1]), 1)[0])
