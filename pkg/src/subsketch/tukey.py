"""Estimating the mollified Tukey-1 loss ``sum_i phi~(x_i)`` from small state.

``phi~`` equals ``|t|`` below ``3 tau/4`` and ``tau`` above ``5 tau/4``; in
between it is the convolution of ``min(|t|, tau)`` with a bump of radius
``tau/4``.  The estimator subsamples coordinates, finds the large ones with a
Count-Sketch, evaluates a polynomial fit of ``phi~`` on mid-sized ones and
handles the rest with a Cauchy l1 sketch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev

from .core import ensure_generator
from .sketches import lower_median, sample_stable

_CELLS = 512
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _bump_raw(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    inside = np.abs(v) < 1
    out[inside] = np.exp(-1.0 / (1.0 - v[inside] ** 2))
    return out


def _gauss(f, a, b):
    """Vectorised Gauss-Legendre integral of ``f`` over each ``[a_k, b_k]``."""
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    pts = 0.5 * (a + b) + half * _GL_NODES
    return np.sum(f(pts) * _GL_WEIGHTS, axis=-1) * half[..., 0]


class _BumpTables:
    """Right-tail integrals ``F(a) = int_a^1 psi`` and ``G(a) = int_a^1 v psi(v) dv``.

    Values at a uniform grid of cell edges are cached; an arbitrary ``a`` adds
    one Gauss-Legendre piece from ``a`` to the next edge.
    """

    def __init__(self, cells: int = _CELLS):
        self.edges = np.linspace(-1.0, 1.0, cells + 1)
        lo, hi = self.edges[:-1], self.edges[1:]
        f_cells = _gauss(_bump_raw, lo, hi)
        g_cells = _gauss(lambda v: v * _bump_raw(v), lo, hi)
        self.mass = float(np.sum(f_cells))
        self.c_psi = 1.0 / self.mass
        # tail sums from each edge to +1
        self.F_edges = np.concatenate([np.cumsum(f_cells[::-1])[::-1], [0.0]]) * self.c_psi
        self.G_edges = np.concatenate([np.cumsum(g_cells[::-1])[::-1], [0.0]]) * self.c_psi

    def tails(self, a):
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        h = self.edges[1] - self.edges[0]
        k = np.minimum(((a + 1.0) / h).astype(np.int64) + 1, len(self.edges) - 1)
        right = self.edges[k]
        F = self.F_edges[k] + self.c_psi * _gauss(_bump_raw, a, right)
        G = self.G_edges[k] + self.c_psi * _gauss(lambda v: v * _bump_raw(v), a, right)
        return F, G


@lru_cache(maxsize=1)
def _tables() -> _BumpTables:
    return _BumpTables()


def bump(v):
    """The normalised bump ``C_psi exp(-1/(1 - v**2))`` on ``(-1, 1)``."""
    return _tables().c_psi * _bump_raw(v)


def bump_constant() -> float:
    return _tables().c_psi


def mollified_tukey_eval(t, tau: float):
    if not tau > 0:
        raise ValueError("tau must be positive")
    t = np.abs(np.asarray(t, dtype=float))
    out = np.minimum(t, tau).astype(float)
    band = (t > 0.75 * tau) & (t < 1.25 * tau)
    if np.any(band):
        tb = t[band] if t.ndim else t
        s = tau / 4.0
        F, G = _tables().tails((tb - tau) / s)
        val = tau - (tau - tb) * F - s * G
        if t.ndim:
            out[band] = val
        else:
            out = val
    return float(out) if np.ndim(out) == 0 else out


def mollified_tukey_norm(x, tau: float) -> float:
    """Exact ``sum_i phi~(x_i)`` by a full scan."""
    return float(np.sum(mollified_tukey_eval(np.asarray(x, dtype=float), tau)))


# ---------------------------------------------------------------------------
# Band polynomial
# ---------------------------------------------------------------------------


MAX_DEGREE = 4096
CERT_POINTS = 10_000


@dataclass(frozen=True)
class BandPolynomial:
    """Chebyshev interpolant of ``phi~`` on ``[a tau, b tau]`` with a grid certificate."""

    tau: float
    lo: float
    hi: float
    poly: chebyshev.Chebyshev
    degree: int
    rel_error: float

    def __call__(self, t):
        return self.poly(np.asarray(t, dtype=float))


def _certify(poly, tau, lo, hi) -> float:
    grid = np.linspace(lo, hi, CERT_POINTS)
    ref = mollified_tukey_eval(grid, tau)
    return float(np.max(np.abs(poly(grid) - ref) / ref))


@lru_cache(maxsize=64)
def fit_band_polynomial(tau: float, a: float, b: float, eps: float) -> BandPolynomial:
    """Double the interpolation degree from 8 until the relative error on a
    10^4-point grid of the band is at most ``eps``."""
    if not 0 < a < 0.75 or not b > 1:
        raise ValueError("need 0 < a < 3/4 and b > 1")
    if not 0 < eps < 0.5:
        raise ValueError("need 0 < eps < 1/2")
    lo, hi = a * tau, b * tau
    deg = 8
    while deg <= MAX_DEGREE:
        poly = chebyshev.Chebyshev.interpolate(lambda t: mollified_tukey_eval(t, tau), deg, domain=[lo, hi])
        err = _certify(poly, tau, lo, hi)
        if err <= eps:
            return BandPolynomial(tau, lo, hi, poly, deg, err)
        deg *= 2
    raise RuntimeError(f"no interpolant up to degree {MAX_DEGREE} reaches relative error {eps}")


# ---------------------------------------------------------------------------
# Count-Sketch heavy hitters
# ---------------------------------------------------------------------------

_PRIME = (1 << 31) - 1


def _poly_hash(coeffs: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Degree-``len(coeffs)-1`` polynomial hash mod 2^31 - 1, one row per repetition."""
    keys = np.asarray(keys, dtype=np.int64) % _PRIME
    out = np.broadcast_to(coeffs[:, :1], (coeffs.shape[0], keys.size)).copy()
    for j in range(1, coeffs.shape[1]):
        out = (out * keys[None, :] + coeffs[:, j : j + 1]) % _PRIME
    return out


class CountSketch:
    """Signed bucket sums over ``reps`` independent hash pairs.

    Bucket hashes are pairwise independent and sign hashes four-wise
    independent; only their coefficients are stored.
    """

    def __init__(self, buckets: int, reps: int, rng):
        gen = ensure_generator(rng)
        self.buckets = int(buckets)
        self.reps = int(reps)
        self._h = gen.integers(1, _PRIME, size=(reps, 2), dtype=np.int64)
        self._s = gen.integers(1, _PRIME, size=(reps, 4), dtype=np.int64)
        self.table = np.zeros((reps, buckets))

    def _locate(self, keys):
        b = _poly_hash(self._h, keys) % self.buckets
        s = 1.0 - 2.0 * (_poly_hash(self._s, keys) & 1)
        return b, s

    def update(self, keys, values, located=None) -> None:
        b, s = located if located is not None else self._locate(keys)
        values = np.asarray(values, dtype=float)
        for r in range(self.reps):
            self.table[r] += np.bincount(b[r], weights=s[r] * values, minlength=self.buckets)

    def estimate(self, keys, located=None) -> np.ndarray:
        b, s = located if located is not None else self._locate(keys)
        rows = np.arange(self.reps)[:, None]
        return np.median(s * self.table[rows, b], axis=0)

    def counters(self) -> int:
        return self.table.size


class CauchyL1Sketch:
    """Median of ``|C v|`` for a Cauchy matrix ``C``; estimates ``||v||_1``."""

    def __init__(self, keys, values, rows: int, rng):
        gen = ensure_generator(rng)
        values = np.asarray(values, dtype=float)
        self.rows = int(rows)
        C = sample_stable(1.0, (self.rows, values.size), gen)
        self.sketch = C @ values if values.size else np.zeros(self.rows)

    def estimate(self) -> float:
        return lower_median(np.abs(self.sketch))


def tail_l1(x, k: int) -> float:
    """``||x_{-k}||_1``: the l1 mass left after zeroing the ``k`` largest entries."""
    a = np.sort(np.abs(np.asarray(x, dtype=float)))
    return float(np.sum(a[: max(0, a.size - k)]))


class HeavyHitterSketch:
    """Count-Sketch plus an l1 sketch of the same vector.

    ``heavy(beta)`` reports ``(index, estimate)`` pairs whose estimate
    reaches ``3/4 beta`` of the estimated residual mass after removing the top
    ``1/beta`` estimates; with ``16/beta`` buckets per repetition every
    beta-heavy index clears that bar and no index below ``beta/2`` does, up to
    the repetition failure probability.
    """

    def __init__(self, keys, values, beta: float, rng, l1_rows: int = 100):
        if not 0 < beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        keys = np.asarray(keys, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        gen = ensure_generator(rng)
        self.beta = float(beta)
        self.keys = keys
        n = max(int(keys.size), 2)
        reps = max(5, math.ceil(math.log2(n))) | 1
        self.cs = CountSketch(math.ceil(16.0 / beta), reps, gen)
        self._located = self.cs._locate(keys)
        self.cs.update(keys, values, self._located)
        self._l1_gen_state = gen.integers(0, 2**63 - 1)
        self.l1_rows = l1_rows
        self._values = values

    def estimates(self) -> np.ndarray:
        return self.cs.estimate(self.keys, self._located)

    def heavy(self) -> list:
        if self.keys.size == 0:
            return []
        est = self.estimates()
        k = math.ceil(1.0 / self.beta)
        order = np.argsort(-np.abs(est), kind="stable")
        residual = self._values.copy()
        residual[order[:k]] -= est[order[:k]]
        tail = CauchyL1Sketch(self.keys, residual, self.l1_rows, int(self._l1_gen_state)).estimate()
        bar = 0.75 * self.beta * tail
        picked = np.flatnonzero((np.abs(est) >= bar) & (est != 0))
        return [(int(self.keys[i]), float(est[i])) for i in picked]


def heavy_hitters(x_sampled, beta: float, rng, keys=None) -> list:
    """Beta-heavy hitters of ``x_sampled`` relative to ``||x_{-1/beta}||_1``.

    ``keys`` names the coordinates (default ``0 .. len - 1``).
    """
    x = np.asarray(x_sampled, dtype=float)
    keys = np.arange(x.size) if keys is None else np.asarray(keys, dtype=np.int64)
    return HeavyHitterSketch(keys, x, beta, rng).heavy()


# ---------------------------------------------------------------------------
# The estimator
# ---------------------------------------------------------------------------

POLY_BAND = (3.0 / 16.0, 5.0)
L1_ROW_CONSTANT = 10.0


def sampling_rate(F: float, tau: float, eps: float, n: int) -> float:
    """Power of 1/1.1 nearest (in log scale) to ``tau / (F eps^2)``, capped at 1."""
    if n <= 1.0 / eps**2 or F <= 0:
        return 1.0
    target = tau / (F * eps**2)
    if target >= 1.0:
        return 1.0
    s = round(-math.log(target) / math.log(1.1))
    return min(1.0, 1.1 ** (-s))


def subsample(n: int, r: float, gen) -> np.ndarray:
    if r >= 1.0:
        return np.arange(n)
    return np.flatnonzero(gen.random(n) < r)


def sampling_estimate(x, tau: float, eps: float, rng) -> tuple:
    """``(Z, r, L)`` where ``Z = (1/r) sum_{i in L} phi~(x_i)`` for a fresh sample ``L``."""
    x = np.asarray(x, dtype=float)
    gen = ensure_generator(rng)
    F = mollified_tukey_norm(x, tau)
    r = sampling_rate(F, tau, eps, x.size)
    L = subsample(x.size, r, gen)
    return mollified_tukey_norm(x[L], tau) / r, r, L


@dataclass(frozen=True)
class TukeyEstimate:
    estimate: float
    exact: float
    r: float
    beta: float
    degree: int
    S1: float
    S2: float
    S3: float
    sample_size: int
    heavy_count: int
    H1: tuple
    H2: tuple
    # the coarse estimate F is the exact scan, not a small-space structure
    oracle_assisted: bool = True

    @property
    def rel_err(self) -> float:
        if self.exact == 0:
            return 0.0 if self.estimate == 0 else math.inf
        return abs(self.estimate - self.exact) / self.exact


def run_tukey_pipeline(x, tau: float, eps: float, rng) -> TukeyEstimate:
    x = np.asarray(x, dtype=float).ravel()
    if not tau > 0 or not eps > 0:
        raise ValueError("tau and eps must be positive")
    gen = ensure_generator(rng)
    beta = eps**2 / 4.0
    poly = fit_band_polynomial(float(tau), *POLY_BAND, float(min(eps, 0.49)))
    F = mollified_tukey_norm(x, tau)
    if F == 0.0:
        return TukeyEstimate(0.0, 0.0, 1.0, beta, poly.degree, 0.0, 0.0, 0.0, 0, 0, (), ())
    r = sampling_rate(F, tau, eps, x.size)
    L = subsample(x.size, r, gen)
    xL = x[L]
    H = HeavyHitterSketch(L, xL, beta, gen).heavy()
    H1 = [(i, e) for i, e in H if abs(e) >= 1.25 * tau]
    H2 = [(i, e) for i, e in H if 0.375 * tau <= abs(e) < 1.25 * tau]
    S1 = tau * len(H1)
    S2 = float(np.sum(poly(np.clip([abs(e) for _, e in H2], poly.lo, poly.hi)))) if H2 else 0.0
    # second pass over the sample: l1 sketch of everything not already counted
    claimed = np.isin(L, [i for i, _ in H1 + H2])
    rest = xL[~claimed]
    S3 = CauchyL1Sketch(L[~claimed], rest, math.ceil(L1_ROW_CONSTANT / eps**2), gen).estimate() if rest.size else 0.0
    return TukeyEstimate(
        estimate=(S1 + S2 + S3) / r,
        exact=F,
        r=r,
        beta=beta,
        degree=poly.degree,
        S1=S1,
        S2=S2,
        S3=S3,
        sample_size=int(L.size),
        heavy_count=len(H),
        H1=tuple(i for i, _ in H1),
        H2=tuple(i for i, _ in H2),
    )


def estimate_tukey(x, tau: float, eps: float, rng) -> float:
    return run_tukey_pipeline(x, tau, eps, rng).estimate


def mixed_vector(n: int, tau: float, spikes: int, rng, band: int = 0) -> np.ndarray:
    """Test workload: ``spikes`` entries in ``[2 tau, 10 tau]``, ``band`` entries in
    ``[tau/2, 3 tau/2]``, the rest uniform in ``[-tau/2, tau/2]``; random signs and order."""
    gen = ensure_generator(rng)
    if spikes + band > n:
        raise ValueError("spikes + band exceeds n")
    small = gen.uniform(-0.5 * tau, 0.5 * tau, n - spikes - band)
    big = gen.uniform(2 * tau, 10 * tau, spikes) * gen.choice([-1.0, 1.0], spikes)
    mid = gen.uniform(0.5 * tau, 1.5 * tau, band) * gen.choice([-1.0, 1.0], band)
    x = np.concatenate([big, mid, small])
    return x[gen.permutation(n)]
