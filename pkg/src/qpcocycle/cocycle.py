"""Quasi-periodic cocycle generators, random products and their group law.

A generator is a pair ``(theta, A)`` of a translation vector on the m-torus
and a continuous map ``A: T^m -> GL(d)``.  Words are sequences of 0-based
generator indices; the product along a word ``x`` started at ``t`` is

    A^n_x(t) = A_{x[n-1]}(f^{n-1}_x t) ... A_{x[1]}(t + theta_{x[0]}) A_{x[0]}(t)

so that ``A^{n+l}_x(t) = A^l_{shift^n x}(f^n_x t) A^n_x(t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import TorusPoint, check_invertible, compound, wrap
from .errors import ConfigError, SingularFiberError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SILVER = math.sqrt(2.0) - 1.0
DEFAULT_GRID_RESOLUTION = 256
VALIDATION_POINTS = 4096


def _points_t(t, m):
    t = np.asarray(t.coords if isinstance(t, TorusPoint) else t, dtype=float)
    return t.reshape(-1, m)


def validation_grid(m: int, per_dim: int | None = None) -> np.ndarray:
    """Uniform grid on the m-torus with at most ~VALIDATION_POINTS nodes."""
    if per_dim is None:
        per_dim = max(2, int(VALIDATION_POINTS ** (1.0 / m)))
        per_dim = min(per_dim, 64)
    axes = [np.arange(per_dim) / per_dim] * m
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


# ---------------------------------------------------------------- fibers


class Fiber:
    """Matrix-valued map on the torus.  Subclasses implement ``batch``."""

    d: int
    m: int

    def batch(self, t: np.ndarray) -> np.ndarray:  # (B, m) -> (B, d, d)
        raise NotImplementedError

    def __call__(self, t) -> np.ndarray:
        return self.batch(_points_t(t, self.m))[0]

    def to_dict(self) -> dict:
        raise ConfigError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True, eq=False)
class Constant(Fiber):
    matrix: np.ndarray
    m: int = 1

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ConfigError("constant fiber must be a square matrix")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def d(self):
        return self.matrix.shape[0]

    def batch(self, t):
        return np.broadcast_to(self.matrix, (len(t), self.d, self.d))

    def to_dict(self):
        return {"type": "constant", "matrix": self.matrix.tolist()}


def _canonical_freq(k):
    k = tuple(int(x) for x in k)
    for x in k:
        if x != 0:
            return (k, 1.0) if x > 0 else (tuple(-y for y in k), -1.0)
    return k, 0.0


@dataclass(frozen=True, eq=False)
class Fourier(Fiber):
    """``A(t) = sum_k C_k cos(2 pi <k,t>) + S_k sin(2 pi <k,t>)``.

    Frequencies are stored canonically (first nonzero entry positive) and
    merged; the sine coefficient of the zero frequency is dropped.
    """

    freqs: np.ndarray
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        freqs = np.atleast_2d(np.asarray(self.freqs, dtype=int))
        C = np.asarray(self.cos, dtype=float)
        S = np.asarray(self.sin, dtype=float)
        if C.ndim != 3 or C.shape != S.shape or C.shape[0] != freqs.shape[0]:
            raise ConfigError("Fourier fiber: freqs, cos and sin shapes disagree")
        merged: dict[tuple, list] = {}
        for k, c, s in zip(freqs, C, S):
            key, sign = _canonical_freq(k)
            if key not in merged:
                merged[key] = [np.zeros_like(c), np.zeros_like(s)]
            merged[key][0] += c
            if sign != 0.0:
                merged[key][1] += sign * s
        keys = sorted(merged)
        f = np.array(keys, dtype=int).reshape(len(keys), freqs.shape[1])
        c = np.array([merged[k][0] for k in keys])
        s = np.array([merged[k][1] for k in keys])
        for a in (f, c, s):
            a.setflags(write=False)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "cos", c)
        object.__setattr__(self, "sin", s)

    @property
    def d(self):
        return self.cos.shape[1]

    @property
    def m(self):
        return self.freqs.shape[1]

    @classmethod
    def from_constant(cls, M, m=1):
        M = np.asarray(M, dtype=float)
        z = np.zeros_like(M)
        return cls(np.zeros((1, m), dtype=int), M[None], z[None])

    def batch(self, t):
        phase = 2.0 * np.pi * (np.asarray(t, dtype=float) @ self.freqs.T)
        return np.einsum("bk,kij->bij", np.cos(phase), self.cos) + np.einsum(
            "bk,kij->bij", np.sin(phase), self.sin
        )

    def translated(self, theta) -> "Fourier":
        """Coefficients of ``t -> A(t + theta)`` by the angle-addition rules."""
        ph = 2.0 * np.pi * (self.freqs @ np.asarray(theta, dtype=float))
        c, s = np.cos(ph)[:, None, None], np.sin(ph)[:, None, None]
        return Fourier(self.freqs, self.cos * c + self.sin * s, self.sin * c - self.cos * s)

    def max_degree(self) -> int:
        return int(np.max(np.abs(self.freqs))) if self.freqs.size else 0

    def to_dict(self):
        return {
            "type": "fourier",
            "terms": [
                {"k": k.tolist(), "cos": c.tolist(), "sin": s.tolist()}
                for k, c, s in zip(self.freqs, self.cos, self.sin)
            ],
        }


@dataclass(frozen=True, eq=False)
class GridSampled(Fiber):
    """Matrices on a uniform periodic grid, multilinear interpolation with wrap-around.

    ``values`` has shape ``(R_1, ..., R_m, d, d)``; node ``(i_1..i_m)`` sits at
    ``(i_1/R_1, ..., i_m/R_m)``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim < 3 or v.shape[-1] != v.shape[-2]:
            raise ConfigError("grid fiber values must have shape (R_1..R_m, d, d)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self):
        return self.values.shape[-1]

    @property
    def m(self):
        return self.values.ndim - 2

    @property
    def resolution(self):
        return self.values.shape[:-2]

    @classmethod
    def sample(cls, fn, m: int, resolution: int | Sequence[int] = DEFAULT_GRID_RESOLUTION):
        """Tabulate a batch function ``fn: (B, m) -> (B, d, d)`` on a grid."""
        res = (resolution,) * m if np.isscalar(resolution) else tuple(resolution)
        axes = [np.arange(r) / r for r in res]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        vals = np.asarray(fn(pts))
        return cls(vals.reshape(*res, vals.shape[-2], vals.shape[-1]))

    def batch(self, t):
        t = np.asarray(t, dtype=float)
        res = np.array(self.resolution)
        x = wrap(t) * res
        i0 = np.floor(x).astype(int)
        frac = x - i0
        out = np.zeros((len(t), self.d, self.d))
        for corner in range(2 ** self.m):
            bits = np.array([(corner >> j) & 1 for j in range(self.m)])
            idx = (i0 + bits) % res
            w = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
            out += w[:, None, None] * self.values[tuple(idx.T)]
        return out

    def to_dict(self):
        return {"type": "grid", "shape": list(self.resolution), "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class CompoundFiber(Fiber):
    """k-th exterior power of another fiber, evaluated pointwise."""

    base: Fiber
    k: int

    @property
    def d(self):
        return math.comb(self.base.d, self.k)

    @property
    def m(self):
        return self.base.m

    def batch(self, t):
        return compound(self.base.batch(t), self.k)


@dataclass(frozen=True, eq=False)
class FramedFiber(Fiber):
    """``t -> L(t + shift)^T A(t) R(t)`` for frame maps ``L``, ``R`` (restrictions and quotients)."""

    base: Fiber
    left: object
    right: object
    shift: np.ndarray

    @property
    def d(self):
        return self.right(np.zeros((1, self.m))).shape[-1]

    @property
    def m(self):
        return self.base.m

    def batch(self, t):
        t = np.asarray(t, dtype=float)
        L = self.left(wrap(t + self.shift))
        return np.swapaxes(L, -1, -2) @ self.base.batch(t) @ self.right(t)


def fiber_from_dict(obj: dict, m: int) -> Fiber:
    kind = obj.get("type")
    if kind == "constant":
        return Constant(obj["matrix"], m=m)
    if kind == "fourier":
        terms = obj["terms"]
        if not terms:
            raise ConfigError("Fourier fiber needs at least one term")
        return Fourier(
            [t["k"] for t in terms], [t["cos"] for t in terms], [t["sin"] for t in terms]
        )
    if kind == "grid":
        vals = np.asarray(obj["values"], dtype=float)
        shape = tuple(obj.get("shape", vals.shape[:-2]))
        return GridSampled(vals.reshape(*shape, vals.shape[-2], vals.shape[-1]))
    raise ConfigError(f"unknown fiber type {kind!r}")


# ---------------------------------------------------------------- generators


@dataclass(frozen=True, eq=False)
class Generator:
    theta: np.ndarray
    fiber: Fiber
    irrational: bool = False

    def __post_init__(self):
        th = wrap(np.atleast_1d(np.asarray(self.theta, dtype=float)))
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        if isinstance(self.fiber, Constant) and self.fiber.m != th.shape[0]:
            object.__setattr__(self, "fiber", Constant(self.fiber.matrix, m=th.shape[0]))
        if self.fiber.m != th.shape[0]:
            raise ConfigError("fiber torus dimension differs from theta")
        self.validate()

    @property
    def d(self):
        return self.fiber.d

    @property
    def m(self):
        return self.theta.shape[0]

    def validate(self, grid: np.ndarray | None = None) -> None:
        if isinstance(self.fiber, Constant):
            check_invertible(self.fiber.matrix, "constant fiber")
            return
        if isinstance(self.fiber, GridSampled):
            vals = self.fiber.values.reshape(-1, self.d, self.d)
            check_invertible(vals, "grid fiber node", shared_scale=True)
            return
        if grid is None:
            per = None
            if isinstance(self.fiber, Fourier):
                per = max(8, 4 * self.fiber.max_degree() + 1)
                per = min(per, max(2, int(VALIDATION_POINTS ** (1.0 / self.m))))
            grid = validation_grid(self.m, per)
        check_invertible(self.fiber.batch(grid), "fiber on validation grid", shared_scale=True)

    def __call__(self, t):
        return self.fiber(t)

    def to_dict(self):
        return {"theta": self.theta.tolist(), "fiber": self.fiber.to_dict()}


def eval_fiber(g: Generator, t) -> np.ndarray:
    """``A_i(t)`` for a single torus point, with the invertibility check."""
    A = g.fiber(t)
    check_invertible(A, "fiber")
    return A


def _pointwise(g2: Generator, g1: Generator):
    th1 = g1.theta

    def fn(t):
        return g2.fiber.batch(wrap(t + th1)) @ g1.fiber.batch(t)

    return fn


def _fourier_product(F2: Fourier, F1: Fourier) -> Fourier:
    ks, cs, ss = [], [], []
    for k2, C2, S2 in zip(F2.freqs, F2.cos, F2.sin):
        for k1, C1, S1 in zip(F1.freqs, F1.cos, F1.sin):
            # cos a cos b = (cos(a+b) + cos(a-b))/2, sin a sin b = (cos(a-b) - cos(a+b))/2
            # cos a sin b = (sin(a+b) - sin(a-b))/2, sin a cos b = (sin(a+b) + sin(a-b))/2
            ks.append(k2 + k1)
            cs.append(0.5 * (C2 @ C1 - S2 @ S1))
            ss.append(0.5 * (C2 @ S1 + S2 @ C1))
            ks.append(k2 - k1)
            cs.append(0.5 * (C2 @ C1 + S2 @ S1))
            ss.append(0.5 * (S2 @ C1 - C2 @ S1))
    return Fourier(np.array(ks), np.array(cs), np.array(ss))


def group_compose(g2: Generator, g1: Generator) -> Generator:
    """Group product ``(theta2 + theta1, A2(theta1 + .) A1(.))``."""
    if g2.d != g1.d or g2.m != g1.m:
        raise ConfigError("cannot compose generators of different dimensions")
    theta = wrap(g2.theta + g1.theta)
    irr = g1.irrational or g2.irrational
    f1, f2 = g1.fiber, g2.fiber
    if isinstance(f1, Constant) and isinstance(f2, Constant):
        return Generator(theta, Constant(f2.matrix @ f1.matrix, m=g1.m), irr)
    spectral = (Constant, Fourier)
    if isinstance(f1, spectral) and isinstance(f2, spectral):
        F1 = f1 if isinstance(f1, Fourier) else Fourier.from_constant(f1.matrix, g1.m)
        F2 = f2 if isinstance(f2, Fourier) else Fourier.from_constant(f2.matrix, g2.m)
        return Generator(theta, _fourier_product(F2.translated(g1.theta), F1), irr)
    res = [r for f in (f1, f2) if isinstance(f, GridSampled) for r in f.resolution]
    resolution = max(res) if res else DEFAULT_GRID_RESOLUTION
    return Generator(theta, GridSampled.sample(_pointwise(g2, g1), g1.m, resolution), irr)


# ---------------------------------------------------------------- systems


@dataclass(frozen=True)
class ProbabilityVector:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).ravel()
        if p.size == 0 or np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise ConfigError("probability weights must be finite and strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError(f"probability weights sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.p.size

    def __array__(self, dtype=None, copy=None):
        return self.p if dtype is None else self.p.astype(dtype)


def as_probability(p) -> np.ndarray:
    if isinstance(p, ProbabilityVector):
        return p.p
    return ProbabilityVector(p).p


class CocycleSystem:
    """N generators sharing fiber dimension d and torus dimension m."""

    def __init__(self, generators: Sequence[Generator], require_irrational: bool = True):
        gens = tuple(generators)
        if not gens:
            raise ConfigError("a cocycle system needs at least one generator")
        d, m = gens[0].d, gens[0].m
        if any(g.d != d or g.m != m for g in gens):
            raise ConfigError("generators disagree on fiber or torus dimension")
        if require_irrational and not any(g.irrational for g in gens):
            raise ConfigError("at least one translation must be flagged rationally independent")
        self.generators = gens
        self.d, self.m, self.N = d, m, len(gens)
        self.thetas = np.array([g.theta for g in gens])
        self._const = None
        if all(isinstance(g.fiber, Constant) for g in gens):
            self._const = np.array([g.fiber.matrix for g in gens])

    def __repr__(self):
        kinds = ",".join(type(g.fiber).__name__ for g in self.generators)
        return f"CocycleSystem(N={self.N}, d={self.d}, m={self.m}, fibers=[{kinds}])"

    @property
    def irrational_flags(self):
        return [g.irrational for g in self.generators]

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    def batch_eval(self, letters: np.ndarray, t: np.ndarray) -> np.ndarray:
        """``A_{letters[b]}(t[b])`` for a batch, shape ``(B, d, d)``."""
        letters = np.asarray(letters)
        if self._const is not None:
            return self._const[letters]
        out = np.empty((len(letters), self.d, self.d))
        for i, g in enumerate(self.generators):
            sel = letters == i
            if np.any(sel):
                out[sel] = g.fiber.batch(t[sel])
        return out

    def eval_all(self, t: np.ndarray) -> np.ndarray:
        """All generators at all points, shape ``(N, B, d, d)``."""
        return np.stack([g.fiber.batch(t) for g in self.generators])

    def translate(self, letters, t) -> np.ndarray:
        return wrap(t + self.thetas[letters])

    def map_fibers(self, fn) -> "CocycleSystem":
        """New system with the same translations and ``fn(fiber)`` as fibers."""
        gens = [Generator(g.theta, fn(g.fiber), g.irrational) for g in self.generators]
        return CocycleSystem(gens, require_irrational=False)

    def exterior(self, k: int) -> "CocycleSystem":
        """The system ``wedge_k A`` with the same translations."""
        if k == 1:
            return self
        if self.is_constant:
            return self.map_fibers(lambda f: Constant(compound(f.matrix, k), m=self.m))
        return self.map_fibers(lambda f: CompoundFiber(f, k))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "generators": [g.to_dict() for g in self.generators],
            "irrational_flags": self.irrational_flags,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CocycleSystem":
        try:
            d, m = int(obj["d"]), int(obj["m"])
            gens_in = obj["generators"]
            flags = obj.get("irrational_flags") or [False] * len(gens_in)
            if len(flags) != len(gens_in):
                raise ConfigError("irrational_flags length differs from generator count")
            gens = []
            for g, flag in zip(gens_in, flags):
                fiber = fiber_from_dict(g["fiber"], m)
                gens.append(Generator(g["theta"], fiber, bool(flag)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed cocycle document: {exc!r}") from exc
        sys = cls(gens)
        if sys.d != d or sys.m != m:
            raise ConfigError("declared d/m disagree with generator data")
        return sys


def constant_system(matrices, thetas=None, m: int = 1) -> CocycleSystem:
    """Constant-fiber system; default translations are golden-ratio multiples (flagged irrational)."""
    mats = [np.asarray(M, dtype=float) for M in matrices]
    if thetas is None:
        thetas = [wrap((i + 1) * GOLDEN * np.ones(m)) for i in range(len(mats))]
        flags = [True] * len(mats)
    else:
        flags = [True] + [False] * (len(mats) - 1)
    gens = [Generator(th, Constant(M, m=m), fl) for M, th, fl in zip(mats, thetas, flags)]
    return CocycleSystem(gens)


# ---------------------------------------------------------------- orbits


@dataclass
class OrbitProduct:
    """Renormalized product: ``A^n = exp(sum(log_scales)) * matrix``."""

    matrix: np.ndarray
    t: np.ndarray
    log_scales: list = field(default_factory=list)

    @property
    def log_scale(self) -> float:
        return float(np.sum(self.log_scales))

    def log_norm(self) -> float:
        return self.log_scale + float(np.log(np.linalg.norm(self.matrix, 2)))

    def full(self) -> np.ndarray:
        return self.matrix * math.exp(self.log_scale)

    def __iter__(self):
        yield self.matrix
        yield self.t
        yield self.log_scales


def orbit_product(sys: CocycleSystem, word: Sequence[int], t) -> OrbitProduct:
    """Product ``A^n_x(t)`` along a finite word, and the end point ``f^n_x(t)``.

    After each step the running matrix is divided by its largest absolute
    entry; the logs of those factors are returned in ``log_scales``.
    """
    t = wrap(np.asarray(t.coords if isinstance(t, TorusPoint) else t, dtype=float).ravel())
    if t.shape[0] != sys.m:
        raise ConfigError("torus point has the wrong dimension")
    P = np.eye(sys.d)
    scales: list[float] = []
    for letter in word:
        if not 0 <= letter < sys.N:
            raise ConfigError(f"letter {letter} out of range for N={sys.N}")
        A = sys.generators[letter].fiber(t)
        try:
            check_invertible(A, "fiber")
        except SingularFiberError as exc:
            raise SingularFiberError(f"singular fiber mid-orbit at t={t.tolist()}") from exc
        P = A @ P
        s = float(np.max(np.abs(P)))
        P = P / s
        scales.append(math.log(s))
        t = wrap(t + sys.thetas[letter])
    return OrbitProduct(P, t, scales)


def fixture(name: str, **params):
    """Named test systems with ground truth; see ``qpcocycle.fixtures``."""
    from .fixtures import fixture as _fixture

    return _fixture(name, **params)
