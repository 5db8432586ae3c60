"""Monte Carlo estimators for the top exponent, the spectrum and directional exponents.

Sample paths are drawn from ``mu_p = p^N x Leb``: one uniform start point on
the torus per path and i.i.d. letters with law ``p``.  All estimators that
share a seed share their sample paths, which keeps cross-method comparisons
tight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import canonical_direction
from .cocycle import CocycleSystem, as_probability, validation_grid
from .errors import CapExceeded, ConfigError, RankCollapseError, SingularFiberError
from .sampling import draw_paths, map_chunks, mean_stderr

DEFAULT_N = 2000
DEFAULT_SAMPLES = 400
GAP_TOL = 1e-2
EXTERIOR_CAP = 1024
ORBIT_STREAM = "orbit"


@dataclass(frozen=True)
class LyapEstimate:
    value: float
    stderr: float
    n: int
    samples: int
    method: str = "mc-norm"

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise SingularFiberError("non-finite exponent estimate")


@dataclass(frozen=True)
class SpectrumResult:
    exponents: np.ndarray
    stderr: np.ndarray
    kappa: int
    n: int
    samples: int
    method: str
    samples_matrix: np.ndarray = field(repr=False, default=None)

    @property
    def total(self) -> float:
        return float(np.sum(self.exponents))


def count_distinct(values, gap_tol: float = GAP_TOL) -> int:
    v = np.sort(np.asarray(values, dtype=float))[::-1]
    if v.size == 0:
        return 0
    return 1 + int(np.sum(-np.diff(v) > gap_tol))


def _check_args(n, samples):
    if n < 1 or samples < 1:
        raise ConfigError("orbit length and sample count must be positive")


# ---------------------------------------------------------------- kernels


def _norm_kernel(sys: CocycleSystem, p, n):
    d = sys.d

    def run(rng, size, _):
        t, letters = draw_paths(rng, size, n, p, sys.m)
        P = np.broadcast_to(np.eye(d), (size, d, d)).copy()
        acc = np.zeros(size)
        for k in range(n):
            P = sys.batch_eval(letters[k], t) @ P
            s = np.max(np.abs(P), axis=(1, 2))
            if not np.all(s > 0) or not np.all(np.isfinite(s)):
                raise SingularFiberError("orbit product collapsed to a singular matrix")
            P /= s[:, None, None]
            acc += np.log(s)
            t = sys.translate(letters[k], t)
        return (acc + np.log(np.linalg.norm(P, ord=2, axis=(1, 2)))) / n

    return run


def _qr_kernel(sys: CocycleSystem, p, n):
    d = sys.d

    def run(rng, size, _):
        t, letters = draw_paths(rng, size, n, p, sys.m)
        Q = np.broadcast_to(np.eye(d), (size, d, d)).copy()
        acc = np.zeros((size, d))
        for k in range(n):
            Q, R = np.linalg.qr(sys.batch_eval(letters[k], t) @ Q)
            diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
            if not np.all(diag > 0):
                raise RankCollapseError("rank collapse in QR accumulation")
            acc += np.log(diag)
            t = sys.translate(letters[k], t)
        return acc / n

    return run


def _vector_kernel(sys: CocycleSystem, p, n, V):
    V = np.asarray(V, dtype=float)

    def run(rng, size, _):
        t, letters = draw_paths(rng, size, n, p, sys.m)
        X = np.broadcast_to(V, (size,) + V.shape).copy()  # (size, nv, d)
        acc = np.zeros((size, V.shape[0]))
        for k in range(n):
            X = np.einsum("bij,bvj->bvi", sys.batch_eval(letters[k], t), X)
            nrm = np.linalg.norm(X, axis=2)
            if not np.all(nrm > 0):
                raise SingularFiberError("orbit annihilated a vector")
            X /= nrm[:, :, None]
            acc += np.log(nrm)
            t = sys.translate(letters[k], t)
        return acc / n

    return run


def orbit_samples(sys, p, n, samples, seed, kind="norm", vectors=None) -> np.ndarray:
    """Per-path values of ``(1/n) log ||A^n||`` (``kind='norm'``), of the
    accumulated QR logs (``'qr'``) or of ``(1/n) log ||A^n v||`` (``'vector'``)."""
    _check_args(n, samples)
    p = as_probability(p)
    if len(p) != sys.N:
        raise ConfigError("probability vector length differs from generator count")
    if kind == "norm":
        fn = _norm_kernel(sys, p, n)
    elif kind == "qr":
        fn = _qr_kernel(sys, p, n)
    elif kind == "vector":
        fn = _vector_kernel(sys, p, n, vectors)
    else:
        raise ConfigError(f"unknown kernel {kind!r}")
    return np.concatenate(map_chunks(fn, samples, seed, ORBIT_STREAM))


# ---------------------------------------------------------------- public estimators


def top_exponent_mc(sys, p, n=DEFAULT_N, samples=DEFAULT_SAMPLES, seed=0) -> LyapEstimate:
    """Top exponent from ``(1/n) log ||A^n_x(t)||`` averaged over sampled paths."""
    vals = orbit_samples(sys, p, n, samples, seed)
    mu, se = mean_stderr(vals)
    return LyapEstimate(float(mu), float(se), n, samples, "mc-norm")


def _spectrum_from_samples(S, n, samples, method, gap_tol):
    mu, se = mean_stderr(S)
    order = np.argsort(-mu, kind="stable")
    mu, se = mu[order], se[order]
    return SpectrumResult(mu, se, count_distinct(mu, gap_tol), n, samples, method, S[:, order])


def spectrum_qr(sys, p, n=DEFAULT_N, samples=DEFAULT_SAMPLES, seed=0, gap_tol=GAP_TOL):
    """Full spectrum by QR re-orthonormalization along each path."""
    S = orbit_samples(sys, p, n, samples, seed, kind="qr")
    return _spectrum_from_samples(S, n, samples, "qr", gap_tol)


def exterior_tops(sys, p, n, samples, seed, size_cap=EXTERIOR_CAP) -> np.ndarray:
    """Per-path top exponents of ``wedge_k A`` for k = 1..d, shape ``(samples, d)``."""
    cols = []
    for k in range(1, sys.d + 1):
        if math.comb(sys.d, k) > size_cap:
            raise CapExceeded(f"C({sys.d},{k}) exceeds the exterior size cap {size_cap}")
        cols.append(orbit_samples(sys.exterior(k), p, n, samples, seed))
    return np.stack(cols, axis=1)


def spectrum_exterior(sys, p, n=DEFAULT_N, samples=DEFAULT_SAMPLES, seed=0,
                      gap_tol=GAP_TOL, size_cap=EXTERIOR_CAP):
    """Spectrum from consecutive differences of exterior-power top exponents.

    Every exterior system is driven by the same paths, so the per-path
    differences give the standard errors directly.
    """
    tops = exterior_tops(sys, p, n, samples, seed, size_cap)
    S = np.diff(np.concatenate([np.zeros((tops.shape[0], 1)), tops], axis=1), axis=1)
    return _spectrum_from_samples(S, n, samples, "exterior", gap_tol)


def det_average(sys, p, Q: int = 64) -> float:
    """``sum_i p_i * mean over a uniform Q^m grid of log|det A_i(t)|``."""
    if Q < 1:
        raise ConfigError("quadrature size must be positive")
    p = as_probability(p)
    grid = validation_grid(sys.m, Q)
    total = 0.0
    for pi, g in zip(p, sys.generators):
        det = np.abs(np.linalg.det(g.fiber.batch(grid)))
        if np.any(det == 0) or not np.all(np.isfinite(det)):
            raise SingularFiberError("singular fiber on the quadrature grid")
        total += pi * float(np.mean(np.log(det)))
    return total


def directional_exponent(sys, p, v, n=DEFAULT_N, samples=DEFAULT_SAMPLES, seed=0) -> LyapEstimate:
    """``(1/n) E log ||A^n_x(t) v||`` for a fixed direction ``v``."""
    u = canonical_direction(getattr(v, "vector", v))
    vals = orbit_samples(sys, p, n, samples, seed, kind="vector", vectors=u[None])[:, 0]
    mu, se = mean_stderr(vals)
    return LyapEstimate(float(mu), float(se), n, samples, "mc-direction")


def directional_table(sys, p, vectors, n, samples, seed):
    """Directional exponents for many directions on shared paths: (means, stderrs, per-path)."""
    V = np.array([canonical_direction(getattr(v, "vector", v)) for v in vectors])
    vals = orbit_samples(sys, p, n, samples, seed, kind="vector", vectors=V)
    mu, se = mean_stderr(vals)
    return mu, se, vals


def directional_spread(sys, p, vectors, n, samples, seed):
    """Max minus min directional exponent over the given directions, with a paired stderr."""
    mu, _, vals = directional_table(sys, p, vectors, n, samples, seed)
    hi, lo = int(np.argmax(mu)), int(np.argmin(mu))
    _, se = mean_stderr(vals[:, hi] - vals[:, lo])
    return float(mu[hi] - mu[lo]), float(se)


@dataclass(frozen=True)
class SweepRow:
    p: np.ndarray
    estimate: LyapEstimate
    delta: float | None


def continuity_sweep(sys, path, n=DEFAULT_N, samples=DEFAULT_SAMPLES, seed=0) -> list[SweepRow]:
    """Top exponent along a path of probability vectors; ``delta`` is the
    change from the previous point.  All points use the same seed, so nearby
    vectors share most of their sampled letters."""
    path = [as_probability(q) for q in path]
    if not path:
        raise ConfigError("empty probability path")
    rows, prev = [], None
    for q in path:
        est = top_exponent_mc(sys, q, n, samples, seed)
        rows.append(SweepRow(q, est, None if prev is None else est.value - prev))
        prev = est.value
    return rows
