"""Small dense linear algebra, exterior powers, projective and torus geometry.

Batched routines take stacks of matrices with the matrix axes last, i.e.
arrays of shape ``(..., d, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .errors import CocycleError, RankCollapseError, SingularFiberError

NORM_TOL = 1e-12
DET_RTOL = 1e-12


# ---------------------------------------------------------------- projective


def canonical_direction(v) -> np.ndarray:
    """Unit vector representing the line through ``v``, first nonzero entry positive."""
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if not np.isfinite(nrm) or nrm <= NORM_TOL:
        raise CocycleError("a projective point needs a nonzero finite vector")
    u = v / nrm
    nz = np.flatnonzero(np.abs(u) > NORM_TOL)
    if u[nz[0]] < 0:
        u = -u
    return u


@dataclass(frozen=True, eq=False)
class ProjectivePoint:
    """A line in R^d; ``v`` and ``-v`` give equal points."""

    vector: np.ndarray

    def __post_init__(self):
        u = canonical_direction(self.vector)
        u.setflags(write=False)
        object.__setattr__(self, "vector", u)

    @classmethod
    def from_angle(cls, phi: float) -> "ProjectivePoint":
        return cls(np.array([np.cos(phi), np.sin(phi)]))

    @property
    def d(self) -> int:
        return self.vector.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ProjectivePoint):
            return NotImplemented
        return self.d == other.d and proj_dist(self, other) <= 1e-12

    def __hash__(self):
        return hash(tuple(np.round(self.vector, 9) + 0.0))

    def __repr__(self):
        return f"ProjectivePoint({np.array2string(self.vector, precision=6)})"


def _as_vec(u) -> np.ndarray:
    return u.vector if isinstance(u, ProjectivePoint) else np.asarray(u, dtype=float)


def wedge_norm(x, y) -> np.ndarray:
    """``||x ^ y||`` along the last axis, via the antisymmetric outer product.

    This keeps full relative accuracy for nearly parallel vectors, where
    ``sqrt(1 - cos^2)`` would not.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = x[..., :, None] * y[..., None, :]
    w = w - np.swapaxes(w, -1, -2)
    return np.sqrt(0.5 * np.sum(w * w, axis=(-1, -2)))


def proj_dist(u, v) -> float | np.ndarray:
    """Projective distance ``||u ^ v|| / (||u|| ||v||) = |sin angle(u, v)|``.

    Accepts ``ProjectivePoint`` objects or raw (not necessarily unit) vectors;
    raw arrays broadcast over leading axes.
    """
    x, y = _as_vec(u), _as_vec(v)
    r = wedge_norm(x, y) / (np.linalg.norm(x, axis=-1) * np.linalg.norm(y, axis=-1))
    r = np.minimum(r, 1.0)
    return float(r) if np.ndim(r) == 0 else r


# ---------------------------------------------------------------- torus


def wrap(x) -> np.ndarray:
    """Reduce into the half-open unit cube; a rounding result of 1.0 maps to 0."""
    y = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(y >= 1.0, 0.0, y)


@dataclass(frozen=True, eq=False)
class TorusPoint:
    coords: np.ndarray

    def __post_init__(self):
        c = wrap(np.atleast_1d(np.asarray(self.coords, dtype=float)))
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def m(self) -> int:
        return self.coords.shape[0]

    def __add__(self, other):
        return torus_add(self, other)

    def __eq__(self, other):
        if not isinstance(other, TorusPoint):
            return NotImplemented
        return self.m == other.m and bool(np.all(self.coords == other.coords))

    def __hash__(self):
        return hash(tuple(self.coords))

    def __repr__(self):
        return f"TorusPoint({tuple(float(c) for c in self.coords)})"


def torus_add(t, theta):
    """Componentwise addition modulo one.

    Returns a ``TorusPoint`` when given one, otherwise an ndarray.
    """
    a = t.coords if isinstance(t, TorusPoint) else t
    b = theta.coords if isinstance(theta, TorusPoint) else theta
    out = wrap(np.asarray(a, dtype=float) + np.asarray(b, dtype=float))
    if isinstance(t, TorusPoint):
        return TorusPoint(out)
    return out


# ---------------------------------------------------------------- matrices


def check_invertible(A, what="matrix", shared_scale=False) -> None:
    """Raise ``SingularFiberError`` unless ``|det A| >= 1e-12 ||A||^d`` (stacks allowed).

    With ``shared_scale`` the reference norm is the largest over the stack,
    which catches a sampled family that degenerates at one node.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    if not np.all(np.isfinite(A)):
        raise SingularFiberError(f"{what} has non-finite entries")
    det = np.abs(np.linalg.det(A))
    scale = np.linalg.norm(A, ord=2, axis=(-2, -1)) ** d
    if shared_scale:
        scale = np.full_like(scale, np.max(scale))
    bad = det < DET_RTOL * scale
    if np.any(bad | (scale == 0)):
        raise SingularFiberError(f"{what} is singular to tolerance (|det|={np.min(det):.3e})")


@lru_cache(maxsize=None)
def exterior_index(d: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Lexicographically ordered k-subsets of ``range(d)``."""
    if not 1 <= k <= d:
        raise CocycleError(f"exterior degree k={k} out of range for d={d}")
    return tuple(combinations(range(d), k))


def compound(A, k: int) -> np.ndarray:
    """k-th compound (exterior power) matrix of ``A``; works on stacks.

    Entry ``(I, J)`` is the minor of ``A`` on rows ``I`` and columns ``J``,
    with subsets in lexicographic order.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    idx = np.array(exterior_index(d, k))
    if k == 1:
        return A.copy()
    if k == d:
        return np.linalg.det(A)[..., None, None]
    rows = idx[:, None, :, None]
    cols = idx[None, :, None, :]
    sub = A[..., rows, cols]
    return np.linalg.det(sub)


class SVDResult(NamedTuple):
    values: np.ndarray
    directions: np.ndarray  # columns: right singular vectors
    left: np.ndarray


def svd(A) -> SVDResult:
    """Singular values in descending order with their right singular directions."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise CocycleError("svd of a non-finite matrix")
    try:
        U, s, Vt = np.linalg.svd(A)
    except np.linalg.LinAlgError as exc:
        raise CocycleError(f"svd did not converge: {exc}") from exc
    return SVDResult(s, np.swapaxes(Vt, -1, -2), U)


def qr_step(A, Q_prev, tol: float = 1e-300):
    """Factor ``A @ Q_prev = Q @ R`` with ``diag(R) > 0``; works on stacks."""
    B = np.asarray(A, dtype=float) @ np.asarray(Q_prev, dtype=float)
    Q, R = np.linalg.qr(B)
    diag = np.diagonal(R, axis1=-2, axis2=-1)
    if np.any(np.abs(diag) <= tol) or not np.all(np.isfinite(diag)):
        raise RankCollapseError("rank collapse in QR step")
    sgn = np.sign(diag)
    Q = Q * sgn[..., None, :]
    R = R * sgn[..., :, None]
    return Q, R


# ---------------------------------------------------------------- subspaces


def orthonormal_frame(basis) -> np.ndarray:
    """Orthonormal columns spanning the column space of ``basis`` (d x k)."""
    B = np.asarray(basis, dtype=float)
    Q, R = np.linalg.qr(B)
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    scale = np.max(np.abs(R), axis=(-2, -1), keepdims=False)
    if np.any(diag <= 1e-10 * np.maximum(scale, NORM_TOL)[..., None]):
        raise RankCollapseError("basis is not of full column rank")
    sgn = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    return Q * sgn[..., None, :]


def complement_frame(frame) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of an orthonormal frame."""
    F = np.asarray(frame, dtype=float)
    d, k = F.shape[-2:]
    Q, _ = np.linalg.qr(F, mode="complete")
    return Q[..., :, k:]


def grassmann_distance(X, Y) -> float | np.ndarray:
    """Sine of the largest principal angle between the column spans of X and Y."""
    Qx = orthonormal_frame(X)
    Qy = orthonormal_frame(Y)
    resid = Qx - Qy @ (np.swapaxes(Qy, -1, -2) @ Qx)
    r = np.linalg.norm(resid, ord=2, axis=(-2, -1))
    r = np.minimum(r, 1.0)
    return float(r) if np.ndim(r) == 0 else r
