"""A small-space sketch of ``||A x||_1`` for two-column ``A``.

Rows split by the sign of their first entry.  For each signed group,
``||A^+ x||_1 / |x_2|`` is a weighted 1-median cost on the line evaluated at
``x_1 / x_2``, so one 1-D coreset per group answers every query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_array


class _LineCost:
    """``c -> sum_i w_i |c - p_i|`` by binary search over prefix sums."""

    def __init__(self, points: np.ndarray, weights: np.ndarray):
        order = np.argsort(points, kind="stable")
        self.p = points[order]
        self.w = weights[order]
        self.cw = np.concatenate([[0.0], np.cumsum(self.w)])
        self.cwp = np.concatenate([[0.0], np.cumsum(self.w * self.p)])

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        if self.p.size == 0:
            return np.zeros_like(c) if c.ndim else 0.0
        k = np.searchsorted(self.p, c, side="right")
        wl, sl = self.cw[k], self.cwp[k]
        out = (c * wl - sl) + (self.cwp[-1] - sl) - c * (self.cw[-1] - wl)
        return np.maximum(out, 0.0) if c.ndim else max(float(out), 0.0)


def weighted_median(points, weights) -> float:
    """Lower weighted median: the first point where cumulative weight reaches half."""
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(points, kind="stable")
    cum = np.cumsum(weights[order])
    return float(points[order][np.searchsorted(cum, 0.5 * cum[-1])])


def line_cost(points, weights, c):
    """Exact weighted 1-median cost at center(s) ``c``."""
    return _LineCost(np.asarray(points, dtype=float), np.asarray(weights, dtype=float))(c)


@dataclass
class Coreset1D:
    points: np.ndarray
    weights: np.ndarray
    epsilon: float
    total_weight: float
    input_size: int

    def __post_init__(self):
        self._cost = _LineCost(self.points, self.weights)

    @property
    def size(self) -> int:
        return int(self.points.size)

    def cost(self, c):
        return self._cost(c)

    def __call__(self, c):
        return self.cost(c)


def build_coreset_1d(points, weights, epsilon: float) -> Coreset1D:
    """Snap weighted points to rings around their weighted median.

    Rings on each side grow by a factor ``1 + eps/4`` starting from radius
    ``r0 = eps cost(m) / (4 W)``; every ring collapses to its weighted mean.
    Moving each point at most ``eps/4`` of its distance to ``m`` (or ``r0``
    inside the first ring) perturbs the cost at any center by at most
    ``eps/2`` times the optimal cost, hence by ``eps/2`` of the cost there.
    """
    points = np.asarray(points, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if points.shape != weights.shape:
        raise ValueError("points and weights differ in length")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if points.size == 0:
        return Coreset1D(np.zeros(0), np.zeros(0), float(epsilon), 0.0, 0)
    if np.any(weights <= 0):
        raise ValueError("weights must be positive")
    W = float(weights.sum())
    m = weighted_median(points, weights)
    opt = float(line_cost(points, weights, m))
    r0 = epsilon * opt / (4.0 * W)
    dist = points - m
    mag = np.abs(dist)
    ring = np.zeros(points.size, dtype=np.int64)
    outer = mag > r0
    if np.any(outer):
        ring[outer] = 1 + np.floor(np.log(mag[outer] / r0) / math.log1p(epsilon / 4.0)).astype(np.int64)
    key = np.where(outer, np.sign(dist).astype(np.int64) * ring, 0)
    labels, inv = np.unique(key, return_inverse=True)
    w = np.bincount(inv, weights=weights, minlength=labels.size)
    wp = np.bincount(inv, weights=weights * points, minlength=labels.size)
    return Coreset1D(wp / w, w, float(epsilon), W, int(points.size))


# ---------------------------------------------------------------------------
# Two-column sketch
# ---------------------------------------------------------------------------


@dataclass
class L1Sketch2D:
    plus: Coreset1D
    minus: Coreset1D
    zero_col2: float  # sum |A_i2| over rows with A_i1 = 0
    col1_mass: float  # sum |A_i1| over all rows
    epsilon: float

    def query(self, x) -> float:
        return query_l1_2d(self, x)

    @property
    def size(self) -> int:
        return self.plus.size + self.minus.size


def split_rows(A):
    """``(A+, A-, A0)`` by the sign of the first column; all-zero rows are dropped."""
    M = as_array(A)
    if M.shape[1] != 2:
        raise ValueError(f"expected two columns, got {M.shape[1]}")
    live = np.any(M != 0, axis=1)
    M = M[live]
    return M[M[:, 0] > 0], M[M[:, 0] < 0], M[M[:, 0] == 0]


def build_l1_2d_sketch(A, epsilon: float) -> L1Sketch2D:
    plus, minus, zero = split_rows(A)

    def coreset(rows):
        return build_coreset_1d(-rows[:, 1] / rows[:, 0], np.abs(rows[:, 0]), epsilon)

    col1 = float(np.abs(plus[:, 0]).sum() + np.abs(minus[:, 0]).sum())
    return L1Sketch2D(coreset(plus), coreset(minus), float(np.abs(zero[:, 1]).sum()), col1, float(epsilon))


def query_l1_2d(sketch: L1Sketch2D, x) -> float:
    x1, x2 = (float(v) for v in np.asarray(x, dtype=float).ravel())
    if x2 == 0.0:
        return abs(x1) * sketch.col1_mass
    c = x1 / x2
    return abs(x2) * (float(sketch.plus.cost(c)) + float(sketch.minus.cost(c)) + sketch.zero_col2)


def size_constant(size: int, n: int, epsilon: float) -> float:
    """``K`` in ``size = K ln(n)^2 / eps``."""
    return size * epsilon / math.log(n) ** 2
