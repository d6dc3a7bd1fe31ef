"""Bit-encoding instances for the power-p subspace sketch, and their decoders.

The construction keeps only the eigenspace of the cube kernel matrix whose
eigenvalues have magnitude ``|lambda0|``, greedily picks nearly orthogonal rows
of that truncated matrix, hides random signs in a vector ``x`` built from
them, and stores ``x`` (shifted positive, p-th rooted, rounded to a fixed grid)
as row scalings of the cube.  Querying a cube vector then reveals one sign.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .core import (
    QueryMatrix,
    RngStream,
    condition_number,
    cube_signs,
    ensure_generator,
    phi_norm,
    popcounts,
    power,
    walsh_hadamard,
)
from .spectrum import GridSpectrum, fourier_spectrum

log = logging.getLogger(__name__)

RESIDUAL_FRACTION = 0.99
MAX_RESAMPLES = 100


# ---------------------------------------------------------------------------
# Spectrum truncation and greedy orthogonalisation
# ---------------------------------------------------------------------------


class TruncatedKernel:
    """``H diag(kept eigenvalues, zeros) H^T`` held implicitly.

    Rows and products are computed with two fast Walsh-Hadamard transforms, so
    nothing of size ``2**d x 2**d`` is ever formed.
    """

    def __init__(self, spec: GridSpectrum):
        if spec.lambda0 is None:
            raise ValueError("spectrum truncation needs even d")
        if spec.lambda0 == 0:
            raise ValueError(
                f"lambda0 = 0 for {spec.kernel.label()} at d = {spec.d}; "
                "there is no nonzero eigenspace to keep"
            )
        self.spec = spec
        self.d = spec.d
        self.n = 1 << spec.d
        kept = spec.kept_weights()
        weights = popcounts(spec.d)
        self.eigenvalues = np.where(kept[weights], spec.by_weight[weights], 0.0)
        self.rank = spec.multiplicity
        self.sigma = abs(spec.lambda0)

    @property
    def row_norm(self) -> float:
        return self.sigma * math.sqrt(self.rank / self.n)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return walsh_hadamard(self.eigenvalues * walsh_hadamard(v))

    def row(self, i: int) -> np.ndarray:
        e = np.zeros(self.n)
        e[i] = 1.0
        return self.matvec(e)

    def row_norms(self) -> np.ndarray:
        return np.full(self.n, self.row_norm)

    def dense(self) -> np.ndarray:
        return walsh_hadamard(walsh_hadamard(np.eye(self.n)) * self.eigenvalues)


def truncate_spectrum(spec: GridSpectrum) -> TruncatedKernel:
    return TruncatedKernel(spec)


class DenseSymmetric:
    """Adapter so :func:`orthogonalize_rows` also runs on an explicit symmetric matrix."""

    def __init__(self, M):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
            raise ValueError("expected a square symmetric matrix")
        self.M = M
        self.n = M.shape[0]

    def matvec(self, v):
        return self.M @ v

    def row(self, i):
        return self.M[i].copy()

    def row_norms(self):
        return np.linalg.norm(self.M, axis=1)


@dataclass
class OrthogonalizedRows:
    """Selected row indices and their mutually orthogonal residuals.

    ``residuals[k]`` belongs to ``indices[k]``; ``basis`` holds the same
    vectors normalised to unit length.
    """

    indices: list
    residuals: np.ndarray
    row_norm: float
    basis: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.indices)


def orthogonalize_rows(op, r: int, sigma: float) -> OrthogonalizedRows:
    """Greedily choose ``floor(r/100)`` rows whose residuals keep 99% of their mass.

    At each step the residual of every row against the already chosen
    residuals is known from the running products ``op @ q``; the smallest
    qualifying index is taken.  ``op`` must be symmetric and expose ``n``,
    ``row``, ``matvec`` and ``row_norms``.
    """
    target = r // 100
    n = op.n
    norms_sq = op.row_norms() ** 2
    proj_sq = np.zeros(n)
    chosen = np.zeros(n, dtype=bool)
    basis = np.empty((target, n))
    images = np.empty((target, n))  # op @ q for each basis vector q
    residuals = np.empty((target, n))
    indices = []
    for k in range(target):
        resid_sq = norms_sq - proj_sq
        ok = (~chosen) & (norms_sq > 0) & (resid_sq > RESIDUAL_FRACTION * norms_sq)
        candidates = np.flatnonzero(ok)
        if candidates.size == 0:
            raise RuntimeError(
                f"no row keeps {RESIDUAL_FRACTION:.0%} of its norm after {k} "
                f"selections (wanted {target})"
            )
        i = int(candidates[0])
        # <q_j, row_i> = (op q_j)_i by symmetry
        resid = op.row(i) - images[:k, i] @ basis[:k]
        q = resid / np.linalg.norm(resid)
        img = op.matvec(q)
        basis[k] = q
        images[k] = img
        residuals[k] = resid
        proj_sq += img**2
        chosen[i] = True
        indices.append(i)
    row_norm = float(np.sqrt(norms_sq.max())) if n else 0.0
    if hasattr(op, "row_norm"):
        row_norm = float(op.row_norm)
    return OrthogonalizedRows(indices=indices, residuals=residuals, row_norm=row_norm, basis=basis)


# ---------------------------------------------------------------------------
# Hard instance
# ---------------------------------------------------------------------------


def shift(d: int) -> float:
    return 5.0 * math.sqrt(d)


def grid_step(d: int, p: float) -> float:
    """Rounding grain ``1 / (p (8 sqrt d)**(1 - 1/p) 2**d)``."""
    return 1.0 / (p * (8.0 * math.sqrt(d)) ** (1.0 - 1.0 / p) * 2.0**d)


def row_sum(d: int, p: float) -> float:
    """Common row sum of the power-p cube kernel matrix."""
    return math.fsum(math.comb(d, i) * abs(d - 2 * i) ** p for i in range(d + 1))


@dataclass(frozen=True)
class Construction:
    """The part of an instance that does not depend on the random signs."""

    d: int
    p: float
    spectrum: GridSpectrum
    kernel: TruncatedKernel
    rows: OrthogonalizedRows


def _check_dims(d: int, p: float) -> None:
    if d % 2 or not 8 <= d <= 20:
        raise ValueError(f"d must be even and in [8, 20], got {d}")
    if not p > 0:
        raise ValueError("p must be positive")
    if float(p).is_integer() and int(p) % 2 == 0:
        raise ValueError(f"p = {p} is an even integer; its spectrum has no usable eigenspace")


@lru_cache(maxsize=16)
def construction(d: int, p: float) -> Construction:
    """Deterministic part of the instance, cached per ``(d, p)``."""
    _check_dims(d, p)
    spec = fourier_spectrum(power(p), d)
    op = truncate_spectrum(spec)
    rows = orthogonalize_rows(op, op.rank, op.sigma)
    return Construction(d, p, spec, op, rows)


@dataclass(frozen=True)
class HardInstance:
    d: int
    p: float
    indices: tuple
    signs: np.ndarray
    x: np.ndarray
    ytilde: QueryMatrix  # 2**d x 1, the rounded row scalings
    A: QueryMatrix
    shift: float
    grain: float
    row_sum: float
    construction: Construction
    resamples: int = 0

    @property
    def sign_map(self) -> dict:
        return {int(i): int(s) for i, s in zip(self.indices, self.signs)}

    @property
    def lambda0(self) -> float:
        return float(self.construction.spectrum.lambda0)

    @property
    def multiplicity(self) -> int:
        return self.construction.spectrum.multiplicity

    def scalings(self) -> np.ndarray:
        return self.ytilde.values[:, 0]

    def exact_answers(self, indices=None) -> np.ndarray:
        """``||A i||_p^p`` for cube vectors ``i`` (default: the encoded indices)."""
        idx = np.asarray(self.indices if indices is None else indices, dtype=np.int64)
        if idx.size == 0:
            return np.zeros(0)
        cube = cube_signs(self.d)
        A = self.A.values
        out = np.empty(idx.size)
        for lo in range(0, idx.size, 1024):
            C = cube[idx[lo : lo + 1024]].astype(float)
            out[lo : lo + 1024] = np.sum(np.abs(A @ C.T) ** self.p, axis=0)
        return out


def build_hard_instance(d: int, p: float, rng, signs=None) -> HardInstance:
    """Encode ``floor(N/100)`` random signs into a ``2**d x d`` matrix.

    ``signs`` forces a sign pattern (used for sanity runs); the norm
    condition ``||x||_inf <= 3 sqrt d`` is then checked once instead of
    resampled.
    """
    con = construction(d, p)
    gen = ensure_generator(rng)
    U = con.rows.basis
    k = len(con.rows)
    bound = 3.0 * math.sqrt(d)
    for attempt in range(MAX_RESAMPLES + 1):
        s = np.asarray(signs, dtype=float) if signs is not None else gen.choice([-1.0, 1.0], size=k)
        if s.shape != (k,):
            raise ValueError(f"expected {k} signs, got shape {s.shape}")
        x = s @ U if k else np.zeros(1 << d)
        if np.max(np.abs(x)) <= bound:
            break
        if signs is not None:
            raise RuntimeError("forced signs give ||x||_inf > 3 sqrt(d)")
    else:
        raise RuntimeError(f"||x||_inf exceeded 3 sqrt(d) in {MAX_RESAMPLES} resamples")
    delta = shift(d)
    grain = grid_step(d, p)
    y = (x + delta) ** (1.0 / p)
    ytilde = QueryMatrix.from_values(y[:, None], grain)
    A = QueryMatrix(ytilde.ints * cube_signs(d).astype(np.int64), grain)
    return HardInstance(
        d=d,
        p=p,
        indices=tuple(con.rows.indices),
        signs=s.astype(np.int64),
        x=x,
        ytilde=ytilde,
        A=A,
        shift=delta,
        grain=grain,
        row_sum=row_sum(d, p),
        construction=con,
        resamples=attempt,
    )


def check_invariants(inst: HardInstance, all_queries: bool = True) -> dict:
    """Evaluate the instance guarantees; returns ``name -> bool``."""
    d, p = inst.d, inst.p
    yp = inst.scalings() ** p
    sd = math.sqrt(d)
    out = {
        "ytilde_range": bool(np.all(yp >= 2 * sd) and np.all(yp <= 8 * sd + 2.0**-d)),
        "rounding_error": bool(np.all(np.abs(yp - (inst.x + inst.shift)) <= 2.0**-d)),
        "x_sup_norm": bool(np.max(np.abs(inst.x)) <= 3 * sd),
    }
    idx = np.arange(1 << d) if all_queries else np.asarray(inst.indices)
    answers = inst.exact_answers(idx)
    out["query_upper_bound"] = bool(np.all(answers <= 2.0**d * (8 * d**1.5) ** p))
    return out


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def recover_bit(answer: float, inst: HardInstance, i: int) -> int:
    """Guess the sign hidden at cube index ``i`` from an estimate of ``||A i||_p^p``."""
    if i not in inst.sign_map:
        raise ValueError(f"index {i} does not carry an encoded sign")
    return 1 if answer - inst.shift * inst.row_sum >= 0 else -1


@dataclass(frozen=True)
class NoiseModel:
    """How the simulated data structure perturbs exact answers.

    ``exact``: no perturbation.  ``additive``: subtract ``magnitude`` in the
    direction that opposes the true sign.  ``multiplicative``: answer in
    ``[exact, (1 + eps) exact]``, pushed up by the full factor whenever that
    could flip a negative sign.
    """

    kind: str = "exact"
    magnitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exact", "additive", "multiplicative"):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if self.magnitude < 0:
            raise ValueError("noise magnitude must be non-negative")

    def apply(self, exact: np.ndarray, signs: np.ndarray) -> np.ndarray:
        if self.kind == "exact":
            return exact
        if self.kind == "additive":
            return exact - signs * self.magnitude
        return exact * (1.0 + self.magnitude * (signs < 0))

    def describe(self) -> str:
        return self.kind if self.kind == "exact" else f"{self.kind}({self.magnitude:.6g})"


def decoder_noise_threshold(d: int, p: float) -> float:
    """The additive tolerance ``0.1 |lambda0| sqrt(N / 2**d)`` of the sign decoder."""
    spec = construction(d, p).spectrum
    return 0.1 * abs(spec.lambda0) * math.sqrt(spec.multiplicity / 2.0**d)


def multiplicative_eps_for(d: int, p: float, factor: float) -> float:
    """``eps`` whose perturbation ``eps ||A i||_p^p`` is ``factor`` times the decoder tolerance.

    ``||A i||_p^p`` is taken at its centre value ``shift * row_sum``; the
    encoded signal moves it by well under one percent.
    """
    return factor * decoder_noise_threshold(d, p) / (shift(d) * row_sum(d, p))


def calc_d_eps(d: int, p: float) -> float:
    """Largest ``eps`` with ``eps 2**d (8 d**1.5)**p + d**p <= 0.1 |lambda0| sqrt(N) / 2**(d/2)``.

    Negative when the inequality fails even at ``eps = 0``, which is the case
    for every dimension that can be built here.
    """
    spec = construction(d, p).spectrum
    rhs = 0.1 * abs(spec.lambda0) * math.sqrt(spec.multiplicity) / 2.0 ** (d / 2)
    return (rhs - d**p) / (2.0**d * (8 * d**1.5) ** p)


def _worker_count(trials: int) -> int:
    cap = int(os.environ.get("SUBSKETCH_THREADS", "1") or 1)
    return max(1, min(cap, trials))


def _one_trial(d, p, noise, stream) -> tuple:
    inst = build_hard_instance(d, p, stream)
    exact = inst.exact_answers()
    answers = noise.apply(exact, inst.signs)
    guesses = np.where(answers - inst.shift * inst.row_sum >= 0, 1, -1)
    return int(np.sum(guesses == inst.signs)), len(inst.indices)


def recovery_experiment(d: int, p: float, noise: NoiseModel, trials: int, rng) -> dict:
    """Monte-Carlo rate at which the sign decoder is right, pooled over bits and trials.

    Trial ``t`` draws its instance from ``rng.child(t)``; totals are summed so
    the result does not depend on worker scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng or 0), "recover")
    con = construction(d, p)
    if len(con.rows) == 0:
        raise ValueError(f"d = {d} encodes no bits (multiplicity {con.spectrum.multiplicity} < 100)")
    streams = [stream.child(t) for t in range(trials)]
    workers = _worker_count(trials)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _one_trial(d, p, noise, s), streams))
    else:
        results = [_one_trial(d, p, noise, s) for s in streams]
    correct = sum(c for c, _ in results)
    total = sum(t for _, t in results)
    first = build_hard_instance(d, p, streams[0])
    return {
        "d": d,
        "p": p,
        "noise_model": noise.describe(),
        "trials": trials,
        "bits_per_trial": len(con.rows),
        "per_bit_success_rate": correct / total,
        "lambda0": float(con.spectrum.lambda0),
        "multiplicity": int(con.spectrum.multiplicity),
        "kappa": condition_number(first.A),
    }


def block_diagonal(matrices) -> QueryMatrix:
    """Stack instances on the diagonal; all blocks must share one grain."""
    mats = list(matrices)
    grains = {m.grain for m in mats}
    if len(grains) != 1:
        raise ValueError("blocks must share a grain")
    n = sum(m.n for m in mats)
    d = sum(m.d for m in mats)
    out = np.zeros((n, d), dtype=np.int64)
    r = c = 0
    for m in mats:
        out[r : r + m.n, c : c + m.d] = m.ints
        r += m.n
        c += m.d
    return QueryMatrix(out, grains.pop())


def block_query(block: int, d: int, blocks: int, j: int) -> np.ndarray:
    """Cube vector ``j`` placed in the coordinates of one diagonal block."""
    q = np.zeros(d * blocks)
    q[block * d : (block + 1) * d] = 1 - 2 * ((j >> np.arange(d)) & 1)
    return q


def block_recovery(instances, A: Optional[QueryMatrix] = None) -> list:
    """Decode every block of a block-diagonal composition; per-block success rates."""
    insts = list(instances)
    if A is None:
        A = block_diagonal([inst.A for inst in insts])
    d = insts[0].d
    rates = []
    kern = power(insts[0].p)
    for b, inst in enumerate(insts):
        hits = 0
        for i, s in inst.sign_map.items():
            ans = phi_norm(A, block_query(b, d, len(insts), i), kern)
            hits += recover_bit(ans, inst, i) == s
        rates.append(hits / len(inst.indices))
    return rates


# ---------------------------------------------------------------------------
# Incoherent sets and the distinguishing experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IncoherentSet:
    d: int
    vectors: np.ndarray  # m x d, entries +-1
    coherence: float
    threshold: float


def coherence_of(vectors: np.ndarray) -> float:
    V = np.asarray(vectors, dtype=float)
    if len(V) < 2:
        return 0.0
    G = np.abs(V @ V.T)
    np.fill_diagonal(G, -np.inf)
    return float(G.max())


def sample_incoherent_set(d: int, m: int, rng) -> IncoherentSet:
    """Rejection-sample ``m`` sign vectors with pairwise ``|<s, t>| <= 3 sqrt(d ln m)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > 2.0 ** (d / 4):
        raise ValueError(f"m = {m} exceeds 2**(d/4) = {2.0 ** (d / 4):g}")
    gen = ensure_generator(rng)
    threshold = 3.0 * math.sqrt(d * math.log(m)) if m > 1 else float(d)
    chosen = np.zeros((0, d))
    rejections = 0
    while len(chosen) < m:
        v = gen.choice([-1.0, 1.0], size=d)
        if len(chosen):
            ips = np.abs(chosen @ v)
            if ips.max() > threshold or np.any(ips == d):
                rejections += 1
                if rejections > 10 * m * m:
                    raise RuntimeError(f"gave up after {rejections} rejections at {len(chosen)}/{m} vectors")
                continue
        chosen = np.vstack([chosen, v])
    return IncoherentSet(d, chosen, coherence_of(chosen), threshold)


@dataclass(frozen=True)
class Separation:
    rows: int
    coherence: float
    planted: float  # ||M1 x||_p^p
    foreign: float  # ||M2 x||_p^p
    foreign_bound: float  # rows * coherence**p
    gap: float  # d / (rows * coherence**p)**(1/p)
    separated: bool

    def __bool__(self):
        return self.separated


def rows_for_separation(d: int, p: float, coherence: float) -> int:
    return max(1, int(math.floor(d ** (p / 2) / (3.0 * coherence / math.sqrt(d)) ** p)))


def distinguishing_experiment(d: int, p: float, R: Optional[int], rng, m: int = 100) -> Separation:
    """Plant a row ``x`` of an incoherent set in one matrix and not the other.

    ``M1`` holds ``x`` among ``R`` rows of the set; ``M2`` holds ``R`` other
    rows.  Separation means ``||M1 x||_p^p >= d**p`` while
    ``||M2 x||_p^p <= R coherence**p < d**p``.  ``R=None`` uses the row count
    that guarantees a gap factor of 3 whenever it is at least 1.
    """
    if p < 2:
        raise ValueError("the distinguishing experiment needs p >= 2")
    gen = ensure_generator(rng)
    S = sample_incoherent_set(d, m, gen)
    coh = S.coherence
    limit = d ** (p / 2) / (coh / math.sqrt(d)) ** p
    if R is None:
        R = rows_for_separation(d, p, coh)
    if R < 1 or R > limit:
        raise ValueError(f"R = {R} violates the separation condition R <= {limit:.3g}")
    if 2 * R > m:
        raise ValueError(f"need at least 2R = {2 * R} vectors, set has {m}")
    perm = gen.permutation(m)
    planted = S.vectors[perm[0]]
    M1 = S.vectors[perm[:R]]
    M2 = S.vectors[perm[R : 2 * R]]
    a = float(np.sum(np.abs(M1 @ planted) ** p))
    b = float(np.sum(np.abs(M2 @ planted) ** p))
    bound = R * coh**p
    return Separation(
        rows=R,
        coherence=coh,
        planted=a,
        foreign=b,
        foreign_bound=bound,
        gap=d / bound ** (1.0 / p),
        separated=bool(a >= d**p and b <= bound < d**p),
    )
