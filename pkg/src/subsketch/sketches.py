"""Subspace sketches: structures built from ``A`` that answer ``||A x||_p^p``.

Exact structures exist for even ``p`` (Gram matrices of monomial lifts); for
other ``p`` the options here are p-stable projections and Lewis-weight row
sampling.  Every sketch reports its storage cost through :meth:`size_bits`.
"""

from __future__ import annotations

import abc
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, stats

from .core import as_array, ensure_generator

ENTRY_BITS = 64
MAX_MONOMIALS = 5000
STABLE_ROW_CONSTANT = 50.0


def _upper(G: np.ndarray) -> np.ndarray:
    return G[np.triu_indices(G.shape[0])]


def _from_upper(vals: np.ndarray, m: int) -> np.ndarray:
    G = np.zeros((m, m))
    G[np.triu_indices(m)] = vals
    return G + np.triu(G, 1).T


class SubspaceSketch(abc.ABC):
    """Answers ``||A x||_p^p`` queries; ``epsilon = 0`` marks an exact sketch."""

    p: float
    epsilon: float
    entry_bits: int = ENTRY_BITS

    @abc.abstractmethod
    def query(self, x) -> float: ...

    @abc.abstractmethod
    def stored_entries(self) -> int:
        """Number of numeric payload values kept by the sketch."""

    def metadata_bits(self) -> int:
        return 0

    def size_bits(self) -> int:
        return self.stored_entries() * self.entry_bits + self.metadata_bits()


def size_bits(sketch: SubspaceSketch) -> int:
    return sketch.size_bits()


# ---------------------------------------------------------------------------
# Exact sketches for even p
# ---------------------------------------------------------------------------


class GramSketch(SubspaceSketch):
    """Keeps the upper triangle of ``A^T A``; exact for ``p = 2``."""

    def __init__(self, A, entry_bits: int = ENTRY_BITS):
        M = as_array(A)
        self.p = 2.0
        self.epsilon = 0.0
        self.d = M.shape[1]
        self.entry_bits = entry_bits
        self._upper = _upper(M.T @ M)
        self._gram = _from_upper(self._upper, self.d)

    def query(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(max(x @ self._gram @ x, 0.0))

    def stored_entries(self) -> int:
        return self._upper.size


def build_gram_sketch(A, entry_bits: int = ENTRY_BITS) -> GramSketch:
    return GramSketch(A, entry_bits)


def monomial_exponents(d: int, degree: int) -> list:
    """Exponent tuples of total degree ``degree`` in graded lexicographic order."""
    out = []
    for combo in itertools.combinations_with_replacement(range(d), degree):
        alpha = [0] * d
        for k in combo:
            alpha[k] += 1
        out.append(tuple(alpha))
    out.sort(reverse=True)  # lex order with x_1 most significant
    return out


def _multinomial(alpha) -> int:
    out = math.factorial(sum(alpha))
    for a in alpha:
        out //= math.factorial(a)
    return out


def _monomials(X: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Rows of ``X`` raised to every exponent tuple: shape ``(len(X), len(exps))``."""
    return np.prod(X[:, None, :] ** exps[None, :, :], axis=2)


class EvenMomentSketch(SubspaceSketch):
    """Exact ``||A x||_p^p`` for even ``p`` through a degree-``p/2`` monomial lift.

    Row ``i`` of the lift ``B`` holds ``multinomial(alpha) * A_i**alpha``, so
    ``B x'`` has entries ``((A x)_i)**(p/2)`` when ``x'`` lists the monomials
    ``x**alpha``.  Only ``G = B^T B`` (upper triangle) is stored.
    """

    def __init__(self, A, p: int, entry_bits: int = ENTRY_BITS):
        if p not in (2, 4, 6):
            raise ValueError(f"p must be 2, 4 or 6, got {p}")
        M = as_array(A)
        self.p = float(p)
        self.epsilon = 0.0
        self.d = M.shape[1]
        self.entry_bits = entry_bits
        half = p // 2
        m = math.comb(self.d + half - 1, half)
        if m > MAX_MONOMIALS:
            raise ValueError(f"{m} monomials exceed the cap of {MAX_MONOMIALS}")
        self.exponents = monomial_exponents(self.d, half)
        self._exps = np.array(self.exponents, dtype=float)
        coeffs = np.array([_multinomial(a) for a in self.exponents], dtype=float)
        B = _monomials(M, self._exps) * coeffs
        self._upper = _upper(B.T @ B)
        self.gram = _from_upper(self._upper, m)

    @property
    def m(self) -> int:
        return len(self.exponents)

    def lift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _monomials(x[None, :], self._exps)[0]

    def query(self, x) -> float:
        z = self.lift(x)
        return float(max(z @ self.gram @ z, 0.0))

    def stored_entries(self) -> int:
        return self._upper.size


def build_even_moment_sketch(A, p: int, entry_bits: int = ENTRY_BITS) -> EvenMomentSketch:
    return EvenMomentSketch(A, p, entry_bits)


# ---------------------------------------------------------------------------
# p-stable sketch
# ---------------------------------------------------------------------------


def sample_stable(p: float, size, gen: np.random.Generator) -> np.ndarray:
    """Symmetric standard p-stable samples (characteristic function ``exp(-|t|**p)``).

    Chambers-Mallows-Stuck; the Cauchy case uses ``tan(pi (U - 1/2))``.
    """
    if not 0 < p <= 2:
        raise ValueError("p-stable laws need 0 < p <= 2")
    if p == 1:
        return np.tan(np.pi * (gen.random(size) - 0.5))
    V = np.pi * (gen.random(size) - 0.5)
    W = gen.standard_exponential(size)
    return np.sin(p * V) / np.cos(V) ** (1 / p) * (np.cos(V - p * V) / W) ** ((1 - p) / p)


@lru_cache(maxsize=32)
def stable_median_scale(p: float) -> float:
    """Median of ``|X|`` for standard symmetric p-stable ``X`` (its 3/4 quantile)."""
    if p == 1:
        return 1.0
    if p == 2:
        return math.sqrt(2.0) * float(stats.norm.ppf(0.75))
    return float(stats.levy_stable.ppf(0.75, p, 0.0))


def lower_median(v: np.ndarray) -> float:
    s = np.sort(v)
    return float(s[(len(s) - 1) // 2])


class StableSketch(SubspaceSketch):
    """Keeps ``S A`` for an ``r x n`` p-stable ``S``; answers with a scaled median."""

    def __init__(self, A, p: float, epsilon: float, rng, row_constant: float = STABLE_ROW_CONSTANT, entry_bits: int = ENTRY_BITS):
        if not 0 < p <= 2:
            raise ValueError("p must lie in (0, 2]")
        if not 0 < epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        M = as_array(A)
        gen = ensure_generator(rng)
        self.p = float(p)
        self.epsilon = float(epsilon)
        self.entry_bits = entry_bits
        self.row_constant = row_constant
        self.rows = max(1, math.ceil(row_constant / epsilon**2 - 1e-9))
        S = sample_stable(p, (self.rows, M.shape[0]), gen)
        self.SA = S @ M
        self.median_scale = stable_median_scale(self.p)

    def query(self, x) -> float:
        v = np.abs(self.SA @ np.asarray(x, dtype=float))
        return (lower_median(v) / self.median_scale) ** self.p

    def stored_entries(self) -> int:
        return self.SA.size


def build_stable_sketch(A, p: float, epsilon: float, rng, row_constant: float = STABLE_ROW_CONSTANT) -> StableSketch:
    return StableSketch(A, p, epsilon, rng, row_constant)


# ---------------------------------------------------------------------------
# Lewis weights and row sampling
# ---------------------------------------------------------------------------


class LewisWeightsError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class LewisWeights:
    w: np.ndarray
    p: float
    iterations: int
    residual: float


def _lewis_update(M: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    G = M.T @ (M * (w ** (1.0 - 2.0 / p))[:, None])
    cf = linalg.cho_factor(G)
    lev = np.einsum("ij,ji->i", M, linalg.cho_solve(cf, M.T))
    return np.maximum(lev, 0.0) ** (p / 2.0)


def compute_lewis_weights(A, p: float, tol: float = 1e-10, max_iter: int = 500) -> LewisWeights:
    """Fixed point ``w_i = (a_i^T (A^T W^(1 - 2/p) A)^{-1} a_i)**(p/2)``.

    Starts from ``(d/n) 1``; if the residual grows the update is damped by half.
    """
    if not 0 < p < 4:
        raise ValueError("the fixed-point iteration contracts only for 0 < p < 4")
    M = as_array(A)
    n, d = M.shape
    if np.linalg.matrix_rank(M) < d:
        raise ValueError("A must have full column rank")
    w = np.full(n, d / n)
    damped = False
    prev = math.inf
    residual = math.inf
    for it in range(1, max_iter + 1):
        new = _lewis_update(M, w, p)
        residual = float(np.max(np.abs(new - w)))
        if residual <= tol:
            w = new
            # residual of the returned point, not of the previous iterate
            residual = float(np.max(np.abs(_lewis_update(M, w, p) - w)))
            if residual <= tol:
                return LewisWeights(w, float(p), it, residual)
            continue
        if residual > prev:
            damped = True
        w = 0.5 * (w + new) if damped else new
        prev = residual
    raise LewisWeightsError(f"no convergence in {max_iter} iterations (residual {residual:.3g})", residual)


class SamplingSketch(SubspaceSketch):
    """``m`` rows drawn with probability ``w_i / d`` and rescaled to be unbiased."""

    def __init__(self, A, p: float, m: int, rng, weights: LewisWeights = None, entry_bits: int = ENTRY_BITS):
        if m < 1:
            raise ValueError("m must be >= 1")
        M = as_array(A)
        gen = ensure_generator(rng)
        lw = weights if weights is not None else compute_lewis_weights(M, p)
        self.p = float(p)
        self.epsilon = math.nan
        self.entry_bits = entry_bits
        self.weights = lw
        q = lw.w / lw.w.sum()
        idx = gen.choice(M.shape[0], size=m, p=q)
        self.rows = M[idx] * ((1.0 / (m * q[idx])) ** (1.0 / p))[:, None]

    def query(self, x) -> float:
        return float(np.sum(np.abs(self.rows @ np.asarray(x, dtype=float)) ** self.p))

    def stored_entries(self) -> int:
        return self.rows.size


def build_sampling_sketch(A, p: float, m: int, rng, weights: LewisWeights = None) -> SamplingSketch:
    return SamplingSketch(A, p, m, rng, weights)
