"""Shared numerics: fixed-precision matrices, scalar kernels, the Walsh-Hadamard
transform, Boolean-cube enumeration and seeded random streams.

Cube convention: row ``j`` of :func:`cube_rows` has ``k``-th entry
``(-1) ** ((j >> k) & 1)``.  With this map the inner product of cube rows
``i`` and ``j`` is ``d - 2 * popcount(i ^ j)``, so kernel matrices indexed by
row number are diagonalised by :func:`walsh_hadamard` in the same index order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

ArrayLike = Union[np.ndarray, Iterable[float]]

MAX_CUBE_DIM = 24


# ---------------------------------------------------------------------------
# Fixed-precision matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryMatrix:
    """An ``n x d`` matrix whose entries are ``integer * grain``.

    The integers are kept as ``int64`` so rounding to the grid is exact and
    bit sizes can be read off directly.
    """

    ints: np.ndarray
    grain: float = 1.0

    def __post_init__(self):
        ints = np.asarray(self.ints)
        if ints.ndim != 2:
            raise ValueError(f"expected a 2-D integer array, got shape {ints.shape}")
        if ints.shape[0] < 1 or ints.shape[1] < 1:
            raise ValueError("a QueryMatrix needs n >= 1 and d >= 1")
        if not np.issubdtype(ints.dtype, np.integer):
            raise TypeError("QueryMatrix entries must be integers (multiples of grain)")
        if not self.grain > 0:
            raise ValueError("grain must be positive")
        ints = ints.astype(np.int64, copy=True)
        ints.setflags(write=False)
        object.__setattr__(self, "ints", ints)
        object.__setattr__(self, "grain", float(self.grain))

    @classmethod
    def from_values(cls, values: ArrayLike, grain: float) -> "QueryMatrix":
        """Round real ``values`` to the nearest integer multiple of ``grain``."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return cls(np.rint(values / grain).astype(np.int64), grain)

    @property
    def n(self) -> int:
        return self.ints.shape[0]

    @property
    def d(self) -> int:
        return self.ints.shape[1]

    @property
    def shape(self):
        return self.ints.shape

    @property
    def values(self) -> np.ndarray:
        return self.ints * self.grain

    def entry_bits(self) -> int:
        """Bits per entry: magnitude bits of the largest integer plus a sign bit."""
        return int(np.abs(self.ints).max()).bit_length() + 1


def as_array(A) -> np.ndarray:
    """Float view of a :class:`QueryMatrix` or anything array-like."""
    if isinstance(A, QueryMatrix):
        return A.values
    return np.atleast_2d(np.asarray(A, dtype=float))


def read_matrix(path) -> QueryMatrix:
    """Parse the text format: header ``n d grain`` then ``n`` rows of ``d`` integers."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"{path}: header must be 'n d grain', got {lines[0]!r}")
    n, d, grain = int(head[0]), int(head[1]), float(head[2])
    rows = [[int(tok) for tok in ln.split()] for ln in lines[1:]]
    if len(rows) != n or any(len(r) != d for r in rows):
        raise ValueError(f"{path}: expected {n} rows of {d} integers")
    return QueryMatrix(np.array(rows, dtype=np.int64).reshape(n, d), grain)


def write_matrix(A: QueryMatrix, path) -> None:
    out = [f"{A.n} {A.d} {A.grain!r}"]
    out.extend(" ".join(str(int(v)) for v in row) for row in A.ints)
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

KERNEL_TAGS = (
    "power",
    "zero",
    "log",
    "tukey",
    "huber",
    "fair",
    "cauchy",
    "l1l2",
    "mollified_tukey",
)


@dataclass(frozen=True)
class KernelFunction:
    """An even, non-negative scalar loss applied coordinatewise.

    Use the module-level constructors (:func:`power`, :func:`huber`, ...)
    rather than building one by hand.
    """

    tag: str
    p: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if self.tag not in KERNEL_TAGS:
            raise ValueError(f"unknown kernel tag {self.tag!r}")
        if not self.p > 0:
            raise ValueError("kernel parameter p must be positive")
        if not self.tau > 0:
            raise ValueError("kernel parameter tau must be positive")

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        tag, p, tau = self.tag, self.p, self.tau
        if tag == "power":
            # 0 ** p is already 0 for p > 0, matching the 0^0 = 0 convention.
            out = t**p
        elif tag == "zero":
            out = (t != 0).astype(float)
        elif tag == "log":
            out = np.where(t >= 1, np.log(np.maximum(t, 1.0)), 0.0)
        elif tag == "tukey":
            out = np.where(t <= tau, t**p, tau**p)
        elif tag == "huber":
            out = np.where(t <= tau, t * t / (2 * tau), t - tau / 2)
        elif tag == "fair":
            out = tau * tau * (t / tau - np.log1p(t / tau))
        elif tag == "cauchy":
            out = 0.5 * tau * tau * np.log1p((t / tau) ** 2)
        elif tag == "l1l2":
            out = 2.0 * (np.sqrt(1.0 + t * t / 2.0) - 1.0)
        else:  # mollified_tukey
            from .tukey import mollified_tukey_eval

            out = mollified_tukey_eval(t, tau)
        if np.ndim(out) == 0:
            return float(out)
        return out

    def is_integer_power(self) -> bool:
        return self.tag == "power" and float(self.p).is_integer()

    def label(self) -> str:
        if self.tag == "power":
            return f"power(p={self.p:g})"
        if self.tag in ("zero", "log", "l1l2"):
            return self.tag
        if self.tag == "tukey":
            return f"tukey(p={self.p:g},tau={self.tau:g})"
        return f"{self.tag}(tau={self.tau:g})"


def power(p: float) -> KernelFunction:
    return KernelFunction("power", p=p)


def zero_indicator() -> KernelFunction:
    return KernelFunction("zero")


def log_abs() -> KernelFunction:
    """``ln|t|`` for ``|t| >= 1``, zero otherwise."""
    return KernelFunction("log")


def tukey(p: float, tau: float) -> KernelFunction:
    return KernelFunction("tukey", p=p, tau=tau)


def huber(tau: float) -> KernelFunction:
    return KernelFunction("huber", tau=tau)


def fair(tau: float) -> KernelFunction:
    return KernelFunction("fair", tau=tau)


def cauchy_loss(tau: float) -> KernelFunction:
    return KernelFunction("cauchy", tau=tau)


def l1l2() -> KernelFunction:
    return KernelFunction("l1l2")


def mollified_tukey(tau: float) -> KernelFunction:
    return KernelFunction("mollified_tukey", tau=tau)


def phi_norm(A, x: ArrayLike, kernel: KernelFunction) -> float:
    """Exact ``sum_i kernel((A x)_i)``; the quantity every sketch approximates."""
    M = as_array(A)
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != M.shape[1]:
        raise ValueError(f"query has length {x.shape[0]}, matrix has {M.shape[1]} columns")
    return float(np.sum(kernel.eval(M @ x)))


# ---------------------------------------------------------------------------
# Walsh-Hadamard transform and the Boolean cube
# ---------------------------------------------------------------------------


def _log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    return n.bit_length() - 1


def walsh_hadamard(v: ArrayLike, normalized: bool = True) -> np.ndarray:
    """Fast Walsh-Hadamard transform along the last axis.

    With ``normalized=True`` this applies the orthogonal matrix with entries
    ``2**(-d/2) * (-1)**popcount(s & z)``, which is its own inverse.
    """
    out = np.array(v, dtype=float, copy=True)
    n = out.shape[-1]
    d = _log2_exact(n)
    lead = out.shape[:-1]
    h = 1
    while h < n:
        blocks = out.reshape(*lead, n // (2 * h), 2, h)
        a = blocks[..., 0, :].copy()
        b = blocks[..., 1, :]
        blocks[..., 0, :] += b
        blocks[..., 1, :] = a - b
        h *= 2
    if normalized:
        out *= 2.0 ** (-d / 2)
    return out


def popcounts(d: int) -> np.ndarray:
    """Hamming weight of every index ``0 .. 2**d - 1``."""
    w = np.zeros(1 << d, dtype=np.int64)
    for k in range(d):
        w[1 << k : 1 << (k + 1)] = w[: 1 << k] + 1
    return w


def cube_signs(d: int) -> np.ndarray:
    """The ``2**d x d`` array of cube vectors in canonical order (int8)."""
    if not 1 <= d <= MAX_CUBE_DIM:
        raise ValueError(f"cube dimension must be in [1, {MAX_CUBE_DIM}], got {d}")
    idx = np.arange(1 << d, dtype=np.int64)[:, None]
    bits = (idx >> np.arange(d, dtype=np.int64)) & 1
    return (1 - 2 * bits).astype(np.int8)


def cube_rows(d: int) -> QueryMatrix:
    return QueryMatrix(cube_signs(d).astype(np.int64), 1.0)


def cube_vector(d: int, j: int) -> np.ndarray:
    return np.array([1 - 2 * ((j >> k) & 1) for k in range(d)], dtype=float)


def condition_number(A) -> float:
    """Ratio of extreme singular values; ``inf`` when A is column-rank deficient."""
    s = np.linalg.svd(as_array(A), compute_uv=False)
    if s.size == 0 or s[-1] <= s[0] * max(as_array(A).shape) * np.finfo(float).eps:
        return math.inf
    return float(s[0] / s[-1])


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    The same ``(seed, label)`` pair always yields the same samples; child
    streams for trial ``i`` are derived deterministically with :meth:`child`.
    """

    seed: int
    label: str = ""
    path: tuple = field(default=())

    def _seed_sequence(self) -> np.random.SeedSequence:
        key = (_label_key(self.label),) + tuple(int(k) for k in self.path)
        return np.random.SeedSequence(entropy=int(self.seed) % (1 << 64), spawn_key=key)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._seed_sequence()))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.label, self.path + (int(index),))

    def sub(self, label: str) -> "RngStream":
        """A stream for a named sub-task, independent of sibling labels."""
        return RngStream(self.seed, f"{self.label}/{label}", self.path)


def ensure_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a numpy Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
