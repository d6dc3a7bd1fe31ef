"""Eigenvalues of Boolean-cube kernel matrices.

For an even kernel ``phi`` the ``2**d x 2**d`` matrix with entries
``phi(<i, j>)`` depends only on the Hamming distance between ``i`` and ``j``.
It is therefore diagonalised by the Hadamard basis, and the eigenvalue of the
character ``s`` is a Krawtchouk sum that depends only on the weight of ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate

from .core import MAX_CUBE_DIM, KernelFunction, cube_signs, popcounts, walsh_hadamard

MULTIPLICITY_RTOL = 1e-9


@dataclass(frozen=True)
class GridSpectrum:
    """Eigenvalue table of the cube kernel matrix, grouped by Hamming weight.

    ``by_weight[w]`` is the (signed) eigenvalue shared by all ``C(d, w)``
    characters of weight ``w``.  ``lambda0`` is the weight ``d/2`` entry (``None``
    for odd ``d``) and ``multiplicity`` counts every eigenvalue whose magnitude
    equals ``|lambda0|``.
    """

    d: int
    kernel: KernelFunction
    by_weight: np.ndarray
    lambda0: Optional[float]
    multiplicity: int

    def kept_weights(self) -> np.ndarray:
        """Boolean mask of weights whose eigenvalue magnitude equals |lambda0|."""
        if self.lambda0 is None:
            return np.zeros(self.d + 1, dtype=bool)
        return _matches(self.by_weight, self.lambda0)

    def eigenvalues(self) -> np.ndarray:
        """All ``2**d`` eigenvalues, indexed like :func:`walsh_hadamard` output."""
        return self.by_weight[popcounts(self.d)]

    def singular_values(self) -> np.ndarray:
        """Sorted (descending) multiset ``{|by_weight[w]|}`` with multiplicities ``C(d, w)``."""
        reps = [math.comb(self.d, w) for w in range(self.d + 1)]
        return np.sort(np.repeat(np.abs(self.by_weight), reps))[::-1]


def _matches(values: np.ndarray, target: float) -> np.ndarray:
    scale = max(abs(target), 1e-300)
    return np.abs(np.abs(values) - abs(target)) <= MULTIPLICITY_RTOL * scale


def kernel_profile(kernel: KernelFunction, d: int) -> np.ndarray:
    """Entry of the kernel matrix at Hamming distance ``i``: ``kernel(d - 2i)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return np.asarray(kernel.eval(d - 2.0 * np.arange(d + 1)), dtype=float)


def _integer_profile(kernel: KernelFunction, d: int):
    """Exact integer profile when the kernel takes integer values on integers."""
    if kernel.is_integer_power():
        p = int(kernel.p)
        return [abs(d - 2 * i) ** p for i in range(d + 1)]
    if kernel.tag == "zero":
        return [int(d - 2 * i != 0) for i in range(d + 1)]
    return None


@lru_cache(maxsize=64)
def krawtchouk_table(d: int) -> tuple:
    """``K[w][i] = sum_j (-1)**j C(w, j) C(d - w, i - j)`` as exact integers."""
    table = []
    for w in range(d + 1):
        row = []
        for i in range(d + 1):
            row.append(
                sum((-1) ** j * math.comb(w, j) * math.comb(d - w, i - j) for j in range(min(w, i) + 1))
            )
        table.append(tuple(row))
    return tuple(table)


def _weighted_sum(coeffs, profile) -> float:
    return math.fsum(c * g for c, g in zip(coeffs, profile))


def _finish(d, kernel, by_weight) -> GridSpectrum:
    by_weight = np.asarray(by_weight, dtype=float)
    if d % 2:
        return GridSpectrum(d, kernel, by_weight, None, 0)
    lam0 = float(by_weight[d // 2])
    if lam0 == 0.0:
        mult = int(sum(math.comb(d, w) for w in range(d + 1) if by_weight[w] == 0.0))
    else:
        mask = _matches(by_weight, lam0)
        mult = int(sum(math.comb(d, w) for w in range(d + 1) if mask[w]))
    return GridSpectrum(d, kernel, by_weight, lam0, mult)


def fourier_spectrum(kernel: KernelFunction, d: int, method: str = "krawtchouk") -> GridSpectrum:
    """Eigenvalues of the cube kernel matrix by weight.

    ``method="krawtchouk"`` costs O(d^2) and is exact in integer arithmetic
    for integer-valued kernels; ``method="wht"`` runs one fast transform of the
    profile over the whole cube (O(d 2^d)) and exists for cross-checking.
    """
    if not 1 <= d <= MAX_CUBE_DIM:
        raise ValueError(f"d must be in [1, {MAX_CUBE_DIM}]")
    if method == "krawtchouk":
        K = krawtchouk_table(d)
        exact = _integer_profile(kernel, d)
        if exact is not None:
            by_weight = [sum(k * g for k, g in zip(K[w], exact)) for w in range(d + 1)]
        else:
            prof = kernel_profile(kernel, d)
            by_weight = [_weighted_sum(K[w], prof) for w in range(d + 1)]
    elif method == "wht":
        f = kernel_profile(kernel, d)[popcounts(d)]
        coeffs = walsh_hadamard(f) * 2.0 ** (d / 2)
        by_weight = [coeffs[(1 << w) - 1] for w in range(d + 1)]
    else:
        raise ValueError(f"unknown method {method!r}")
    return _finish(d, kernel, by_weight)


def dense_kernel_matrix(kernel: KernelFunction, d: int) -> np.ndarray:
    """Materialise ``M[i, j] = kernel(<i, j>)``; only sensible for small ``d``."""
    C = cube_signs(d).astype(float)
    return np.asarray(kernel.eval(C @ C.T), dtype=float)


def lambda0_alternating_sum(kernel: KernelFunction, d: int):
    """``sum_{even i} (-1)**(i/2) C(d/2, i/2) kernel(d - 2i)`` (signed).

    Returns a Python ``int`` when the kernel is integer-valued on integers, so
    vanishing cases come out as exactly 0.
    """
    if d % 2 or d < 2:
        raise ValueError(f"d must be a positive even integer, got {d}")
    h = d // 2
    exact = _integer_profile(kernel, d)
    if exact is not None:
        return sum((-1) ** j * math.comb(h, j) * exact[2 * j] for j in range(h + 1))
    prof = kernel_profile(kernel, d)
    return math.fsum((-1) ** j * math.comb(h, j) * prof[2 * j] for j in range(h + 1))


def _sin_power_integral(p: float, m: int) -> float:
    """``int_0^inf sin(t)**m / t**(p + 1) dt`` for even ``m`` and ``0 < p < m``.

    The first few periods are integrated adaptively one pi-interval at a time.
    On the tail ``sin**m`` is replaced by its finite cosine series, so the
    remainder is a constant term with a closed form plus Fourier integrals
    handled by QUADPACK's oscillatory rule.
    """
    periods = 8
    head = 0.0
    for k in range(periods):
        val, _ = integrate.quad(
            lambda t: np.sin(t) ** m * t ** (-p - 1.0),
            k * math.pi,
            (k + 1) * math.pi,
            epsabs=0.0,
            epsrel=1e-13,
            limit=200,
        )
        head += val
    T = periods * math.pi
    n = m // 2
    scale = 4.0 ** (-n)
    tail = scale * math.comb(2 * n, n) * T ** (-p) / p
    for k in range(1, n + 1):
        osc, _ = integrate.quad(lambda t: t ** (-p - 1.0), T, np.inf, weight="cos", wvar=2.0 * k)
        tail += scale * 2.0 * (-1) ** k * math.comb(2 * n, n + k) * osc
    return head + tail


def lambda0_integral(p: float, d: int) -> float:
    """The weight-``d/2`` eigenvalue of the power-``p`` cube kernel via its integral form.

    With ``2n = d/2`` the alternating sum equals
    ``(-1)**(n+1) 2**(d/2 + p + 1) Gamma(p + 1)/pi sin(pi p/2) int_0^inf sin(t)**(d/2) / t**(p+1) dt``.
    Valid for ``d`` divisible by 4 and ``0 < p < d/2``.
    """
    if d % 4 or d <= 0:
        raise ValueError(f"d must be a positive multiple of 4, got {d}")
    half = d // 2
    if not 0 < p < half:
        raise ValueError(f"p must lie in (0, {half}) for d = {d}, got {p}")
    if float(p).is_integer() and int(p) % 2 == 0:
        return 0.0
    n = half // 2
    prefactor = 2.0 ** (half + p + 1) * math.gamma(p + 1) / math.pi * math.sin(math.pi * p / 2)
    sign = -1.0 if n % 2 == 0 else 1.0
    return sign * prefactor * _sin_power_integral(p, half)


@dataclass(frozen=True)
class LowerBoundCheck:
    lambda0: float
    bound: float
    ratio: float


def lambda0_lower_bound_check(kernel: KernelFunction, d: int, c: float = 1.0) -> LowerBoundCheck:
    """Compare ``|lambda0|`` with ``c 2**(d/2)/sqrt(d)`` (times ``|sin(p pi/2)|`` for powers).

    ``ratio`` is 1 when both sides vanish and ``inf`` when only the bound does.
    """
    if d % 8 or not 8 <= d <= MAX_CUBE_DIM:
        raise ValueError(f"d must be a multiple of 8 in [8, {MAX_CUBE_DIM}], got {d}")
    lam0 = abs(float(lambda0_alternating_sum(kernel, d)))
    bound = c * 2.0 ** (d / 2) / math.sqrt(d)
    if kernel.tag == "power":
        s = math.sin(math.pi * kernel.p / 2)
        bound *= 0.0 if float(kernel.p).is_integer() and int(kernel.p) % 2 == 0 else abs(s)
    if bound == 0.0:
        ratio = 1.0 if lam0 == 0.0 else math.inf
    else:
        ratio = lam0 / bound
    return LowerBoundCheck(lam0, bound, ratio)
