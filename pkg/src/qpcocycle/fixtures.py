"""Named test systems with known ground truth.

Catalog: ``identity``, ``diagonal-const``, ``triangular-const``,
``triangular-fourier``, ``rotation-band``, ``schrodinger-like`` and
``irreducible-2d``.  Each returns a ``Fixture`` holding the system, a default
weight vector and whatever closed-form information is available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cocycle import GOLDEN, CocycleSystem, Constant, Fourier, Generator, as_probability
from .errors import ConfigError
from .reduction import Section, coordinate_section

_SURDS = (GOLDEN, math.sqrt(2.0) - 1.0, math.sqrt(3.0) - 1.0, math.sqrt(5.0) - 2.0,
          math.sqrt(7.0) - 2.0, math.sqrt(11.0) - 3.0, math.sqrt(13.0) - 3.0)


@dataclass
class Fixture:
    name: str
    system: CocycleSystem
    p: np.ndarray
    spectrum: Callable | None = None  # p -> exponents, descending
    section: Section | None = None
    sections: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def exact_spectrum(self, p=None):
        if self.spectrum is None:
            return None
        return self.spectrum(self.p if p is None else as_probability(p))

    def __iter__(self):
        yield self.system
        yield self.spectrum
        yield self.section


def default_thetas(N: int, m: int = 1) -> np.ndarray:
    """Quadratic irrationals, a different one per generator and coordinate."""
    th = np.empty((N, m))
    for i in range(N):
        for j in range(m):
            th[i, j] = _SURDS[(i * m + j) % len(_SURDS)]
    return th


def _system(fibers, thetas, m):
    th = default_thetas(len(fibers), m) if thetas is None else np.atleast_2d(np.asarray(thetas, float))
    if th.shape[0] != len(fibers):
        th = th.reshape(len(fibers), -1)
    gens = [Generator(t, f, True) for t, f in zip(th, fibers)]
    return CocycleSystem(gens)


def _uniform(N):
    return np.full(N, 1.0 / N)


def _rot(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def _sorted_desc(x):
    return np.sort(np.asarray(x, dtype=float))[::-1]


# ---------------------------------------------------------------- catalog


def identity(d=2, N=2, m=1, thetas=None, p=None):
    fibers = [Constant(np.eye(d), m=m) for _ in range(N)]
    sys = _system(fibers, thetas, m)
    return Fixture("identity", sys, as_probability(p if p is not None else _uniform(N)),
                   spectrum=lambda q: np.zeros(d), section=coordinate_section(d, 1) if d > 1 else None,
                   params=dict(d=d, N=N, m=m))


def diagonal_const(a=(2.0, 3.0), b=(0.5, 1.0 / 3.0), m=1, thetas=None, p=None):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ConfigError("a and b must have equal length")
    fibers = [Constant(np.diag([ai, bi]), m=m) for ai, bi in zip(a, b)]
    sys = _system(fibers, thetas, m)
    la, lb = np.log(np.abs(a)), np.log(np.abs(b))

    def spectrum(q):
        return _sorted_desc([q @ la, q @ lb])

    return Fixture("diagonal-const", sys, as_probability(p if p is not None else _uniform(len(a))),
                   spectrum=spectrum, section=coordinate_section(2, 1),
                   sections=[coordinate_section(2, 1)], params=dict(a=a.tolist(), b=b.tolist()))


def triangular_const(diagonals=((2.0, 0.5), (3.0, 0.75)), upper=1.0, m=1, thetas=None, p=None,
                     seed=0):
    """Upper-triangular constants with the given diagonals.

    ``upper`` is a scalar used for every strictly upper entry, or an
    ``(N, d, d)`` array whose strictly upper part is used.
    """
    D = np.atleast_2d(np.asarray(diagonals, float))
    N, d = D.shape
    if np.isscalar(upper):
        U = np.triu(np.full((d, d), float(upper)), 1)
        U = np.broadcast_to(U, (N, d, d))
    else:
        U = np.triu(np.asarray(upper, float), 1)
    mats = [np.diag(D[i]) + U[i] for i in range(N)]
    sys = _system([Constant(M, m=m) for M in mats], thetas, m)
    logs = np.log(np.abs(D))

    def spectrum(q):
        return _sorted_desc(q @ logs)

    secs = [coordinate_section(d, k) for k in range(1, d)]
    return Fixture("triangular-const", sys, as_probability(p if p is not None else _uniform(N)),
                   spectrum=spectrum, section=secs[0] if secs else None, sections=secs,
                   params=dict(diagonals=D.tolist()))


def triangular_fourier(a=((2.0, 0.8), (0.6, 2.5)), eps=0.3, c=(1.0, 0.5), thetas=None, p=None):
    """2x2 upper-triangular fibers ``[[a_i1 + eps cos, c0 + c1 sin], [0, a_i2 + eps cos]]`` (m = 1).

    Uses ``int_0^1 log|a + eps cos 2 pi t| dt = log((|a| + sqrt(a^2 - eps^2)) / 2)`` for
    ``|a| > |eps|``.
    """
    A = np.atleast_2d(np.asarray(a, float))
    N = A.shape[0]
    if np.any(np.abs(A) <= abs(eps)):
        raise ConfigError("diagonal means must exceed the modulation amplitude")
    fibers = []
    for i in range(N):
        C0 = np.array([[A[i, 0], c[0]], [0.0, A[i, 1]]])
        C1 = np.array([[eps, 0.0], [0.0, eps]])
        S1 = np.array([[0.0, c[1]], [0.0, 0.0]])
        fibers.append(Fourier([[0], [1]], [C0, C1], [np.zeros((2, 2)), S1]))
    sys = _system(fibers, thetas, 1)
    logs = np.log((np.abs(A) + np.sqrt(A ** 2 - eps ** 2)) / 2.0)

    def spectrum(q):
        return _sorted_desc(q @ logs)

    sec = coordinate_section(2, 1)
    return Fixture("triangular-fourier", sys, as_probability(p if p is not None else _uniform(N)),
                   spectrum=spectrum, section=sec, sections=[sec],
                   params=dict(a=A.tolist(), eps=eps, c=list(c)))


def rotation_band(omegas=(0.0, 1.0), k=(1, 1), thetas=None, p=None):
    """Rotations ``R(2 pi k_i t + omega_i)``; ``k_i = 0`` gives constant rotations."""
    fibers = []
    for om, ki in zip(omegas, k):
        R = _rot(om)
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        if ki == 0:
            fibers.append(Constant(R))
        else:
            # R(x + om) = R(om) cos x + R(om) J sin x
            fibers.append(Fourier([[ki]], [R], [R @ J]))
    sys = _system(fibers, thetas, 1)
    N = len(fibers)
    return Fixture("rotation-band", sys, as_probability(p if p is not None else _uniform(N)),
                   spectrum=lambda q: np.zeros(2), params=dict(omegas=list(omegas), k=list(k)))


def schrodinger_like(E=(0.0, 0.5), lam=(2.5, 3.0), thetas=None, p=None):
    """``[[E_i - lam_i cos 2 pi t, -1], [1, 0]]`` (unit determinant)."""
    fibers = []
    for e, l in zip(E, lam):
        C0 = np.array([[e, -1.0], [1.0, 0.0]])
        C1 = np.array([[-l, 0.0], [0.0, 0.0]])
        fibers.append(Fourier([[0], [1]], [C0, C1], [np.zeros((2, 2)), np.zeros((2, 2))]))
    sys = _system(fibers, thetas, 1)
    N = len(fibers)
    return Fixture("schrodinger-like", sys, as_probability(p if p is not None else _uniform(N)),
                   params=dict(E=list(E), lam=list(lam)))


def irreducible_2d(s=2.0, omegas=(0.0, 1.0), thetas=None, p=None):
    """``diag(e^s, e^-s) R(2 pi t + omega_i)``: unit determinant, no invariant section.

    The rotation sweeps every direction as ``t`` varies, which rules out
    measurable invariant line fields and makes the top exponent simple.
    """
    s_arr = np.broadcast_to(np.asarray(s, float), (len(omegas),))
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    fibers = []
    for si, om in zip(s_arr, omegas):
        DR = np.diag([math.exp(si), math.exp(-si)]) @ _rot(om)
        fibers.append(Fourier([[1]], [DR], [DR @ J]))
    sys = _system(fibers, thetas, 1)
    N = len(fibers)
    return Fixture("irreducible-2d", sys, as_probability(p if p is not None else _uniform(N)),
                   params=dict(s=s_arr.tolist(), omegas=list(omegas)))


CATALOG = {
    "identity": identity,
    "diagonal-const": diagonal_const,
    "triangular-const": triangular_const,
    "triangular-fourier": triangular_fourier,
    "rotation-band": rotation_band,
    "schrodinger-like": schrodinger_like,
    "irreducible-2d": irreducible_2d,
}


def fixture(name: str, **params) -> Fixture:
    try:
        builder = CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown fixture {name!r}; known: {sorted(CATALOG)}") from None
    return builder(**params)
