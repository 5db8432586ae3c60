"""Invariant sections, restricted and quotient cocycles, and reduction chains.

A section assigns a k-dimensional subspace ``V(t)`` to each torus point.  It
is invariant when ``A_j(t) V(t) = V(t + theta_j)`` for every generator.  The
restricted cocycle acts on ``V`` in orthonormal frame coordinates, the
quotient acts on ``R^d / V`` through the orthogonal complement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .algebra import complement_frame, grassmann_distance, orthonormal_frame, wrap
from .cocycle import (
    CocycleSystem,
    Constant,
    Fourier,
    FramedFiber,
    GridSampled,
    validation_grid,
)
from .errors import ConfigError, InvarianceError, RankCollapseError
from .lyapunov import DEFAULT_N, DEFAULT_SAMPLES, top_exponent_mc

CONSTANT_TOL = 1e-8
GRID_TOL = 1e-4
CONTINUITY_JUMP = 0.5


class Section:
    """Constant subspace (``basis`` is d x k) or per-node frames on a torus grid.

    Grid frames have shape ``(R_1..R_m, d, k)``; between nodes they are
    interpolated multilinearly and re-orthonormalized.
    """

    def __init__(self, basis=None, frames=None):
        if (basis is None) == (frames is None):
            raise ConfigError("give exactly one of basis or frames")
        if basis is not None:
            B = np.asarray(basis, dtype=float)
            if B.ndim == 1:
                B = B[:, None]
            self.kind = "constant"
            self.basis = orthonormal_frame(B)
            self.frames = None
        else:
            Fr = np.asarray(frames, dtype=float)
            if Fr.ndim < 3:
                raise ConfigError("grid frames need shape (R_1..R_m, d, k)")
            flat = orthonormal_frame(Fr.reshape(-1, *Fr.shape[-2:]))
            for i in range(1, flat.shape[0]):
                # align column signs with the previous node
                sgn = np.sign(np.sum(flat[i] * flat[i - 1], axis=0))
                flat[i] *= np.where(sgn == 0, 1.0, sgn)
            self.kind = "grid"
            self.frames = flat.reshape(Fr.shape)
            self.basis = None
            self._check_continuity()

    @property
    def d(self) -> int:
        return (self.basis if self.basis is not None else self.frames).shape[-2]

    @property
    def k(self) -> int:
        return (self.basis if self.basis is not None else self.frames).shape[-1]

    @property
    def resolution(self):
        return None if self.frames is None else self.frames.shape[:-2]

    def _check_continuity(self):
        res = self.resolution
        for axis in range(len(res)):
            nxt = np.roll(self.frames, -1, axis=axis)
            a = self.frames.reshape(-1, self.d, self.k)
            b = nxt.reshape(-1, self.d, self.k)
            jump = np.max(grassmann_distance(a, b))
            if jump > CONTINUITY_JUMP:
                raise ConfigError(f"section frames jump by {jump:.3f} between adjacent nodes")

    def frame(self, t) -> np.ndarray:
        """Orthonormal frames at points ``t`` (B, m), shape ``(B, d, k)``."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if self.kind == "constant":
            return np.broadcast_to(self.basis, (len(t), self.d, self.k))
        res = np.array(self.resolution)
        x = wrap(t) * res
        i0 = np.floor(x).astype(int)
        frac = x - i0
        m = len(res)
        out = np.zeros((len(t), self.d, self.k))
        for corner in range(2 ** m):
            bits = np.array([(corner >> j) & 1 for j in range(m)])
            idx = (i0 + bits) % res
            w = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
            out += w[:, None, None] * self.frames[tuple(idx.T)]
        return orthonormal_frame(out)

    def complement(self, t) -> np.ndarray:
        if self.kind == "constant":
            C = complement_frame(self.basis)
            return np.broadcast_to(C, (len(np.atleast_2d(t)), self.d, self.d - self.k))
        return complement_frame(self.frame(t))

    def nodes(self) -> np.ndarray:
        res = self.resolution
        axes = [np.arange(r) / r for r in res]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def default_tol(self) -> float:
        return CONSTANT_TOL if self.kind == "constant" else GRID_TOL

    def contains(self, other: "Section", t=None, tol=1e-8) -> bool:
        """True when ``other(t)`` is a subspace of ``self(t)`` at the test points."""
        if t is None:
            t = self.nodes() if self.kind == "grid" else (
                other.nodes() if other.kind == "grid" else np.zeros((1, 1)))
        F, G = self.frame(t), other.frame(t)
        resid = G - F @ (np.swapaxes(F, -1, -2) @ G)
        return bool(np.max(np.linalg.norm(resid, ord=2, axis=(-2, -1))) <= tol)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"type": "constant", "basis": self.basis.tolist()}
        return {"type": "grid", "shape": list(self.resolution), "frames": self.frames.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Section":
        kind = obj.get("type", "constant")
        if kind == "constant":
            return cls(basis=obj["basis"])
        if kind == "grid":
            return cls(frames=obj["frames"])
        raise ConfigError(f"unknown section type {kind!r}")

    def __repr__(self):
        return f"Section(kind={self.kind}, d={self.d}, k={self.k})"


def coordinate_section(d: int, k: int) -> Section:
    """``span(e_1, ..., e_k)`` in R^d."""
    return Section(basis=np.eye(d)[:, :k])


# ---------------------------------------------------------------- invariance


def _check_grid(sys, V, grid):
    if grid is not None:
        return np.atleast_2d(np.asarray(grid, dtype=float))
    if V.kind == "grid":
        return V.nodes()
    return validation_grid(sys.m, 16 if sys.m <= 2 else 4)


def check_invariant(sys: CocycleSystem, V: Section, tol=None, grid=None) -> float:
    """Largest principal-angle sine between ``A_j(t) V(t)`` and ``V(t + theta_j)``.

    The maximum runs over all generators and grid points.  Compare the
    result with ``tol`` (``V.default_tol()`` when omitted) via ``is_invariant``.
    """
    if V.d != sys.d:
        raise ConfigError("section and system dimensions differ")
    pts = _check_grid(sys, V, grid)
    F = V.frame(pts)
    worst = 0.0
    for g in sys.generators:
        pushed = g.fiber.batch(pts) @ F
        try:
            defect = grassmann_distance(pushed, V.frame(wrap(pts + g.theta)))
        except RankCollapseError as exc:
            raise RankCollapseError("pushed-forward frame lost rank") from exc
        worst = max(worst, float(np.max(defect)))
    return worst


def is_invariant(sys, V, tol=None, grid=None) -> bool:
    tol = V.default_tol() if tol is None else tol
    return check_invariant(sys, V, grid=grid) <= tol


def _require_invariant(sys, V, tol, grid):
    tol = V.default_tol() if tol is None else tol
    defect = check_invariant(sys, V, grid=grid)
    if defect > tol:
        raise InvarianceError(f"section is not invariant (defect {defect:.3e} > {tol:.1e})", defect)
    return defect


def _framed_system(sys: CocycleSystem, frame_fn, const_frame, change):
    """System of ``Rinv L(t+theta)^T A(t) L(t) R`` for an orthonormal frame map ``L``."""
    R = np.eye(change) if np.isscalar(change) else np.asarray(change, dtype=float)
    Rinv = np.linalg.inv(R)

    def conj(M):
        return Rinv @ (const_frame.T @ M @ const_frame) @ R

    def transform(fiber):
        if const_frame is not None:
            if isinstance(fiber, Constant):
                return Constant(conj(fiber.matrix), m=sys.m)
            if isinstance(fiber, Fourier):
                return Fourier(fiber.freqs, [conj(c) for c in fiber.cos], [conj(s) for s in fiber.sin])
            if isinstance(fiber, GridSampled):
                vals = fiber.values
                flat = vals.reshape(-1, sys.d, sys.d)
                new = np.array([conj(M) for M in flat])
                return GridSampled(new.reshape(*vals.shape[:-2], *new.shape[-2:]))
        return None

    gens = []
    for g in sys.generators:
        fib = transform(g.fiber)
        if fib is None:
            def left(t, _f=frame_fn):
                return _f(t) @ Rinv.T

            def right(t, _f=frame_fn):
                return _f(t) @ R

            fib = FramedFiber(g.fiber, left, right, g.theta)
        gens.append(type(g)(g.theta, fib, g.irrational))
    return CocycleSystem(gens, require_irrational=False)


def restrict(sys: CocycleSystem, V: Section, tol=None, grid=None, frame=None) -> CocycleSystem:
    """Cocycle induced on the invariant section, in orthonormal frame coordinates.

    ``frame`` is an optional invertible k x k change of frame ``J -> R^{-1} J``.
    """
    _require_invariant(sys, V, tol, grid)
    const = V.basis if V.kind == "constant" else None
    return _framed_system(sys, V.frame, const, frame if frame is not None else V.k)


def quotient(sys: CocycleSystem, V: Section, tol=None, grid=None, frame=None) -> CocycleSystem:
    """Cocycle induced on ``R^d / V``, identified with the orthogonal complement."""
    _require_invariant(sys, V, tol, grid)
    if V.k == V.d:
        raise ConfigError("quotient by the whole space is zero-dimensional")
    const = complement_frame(V.basis) if V.kind == "constant" else None
    return _framed_system(sys, V.complement, const, frame if frame is not None else V.d - V.k)


# ---------------------------------------------------------------- max formula


@dataclass(frozen=True)
class KiferReport:
    ambient: object
    restricted: object
    quotient: object
    passed: bool
    tolerance: float

    @property
    def branch(self) -> str:
        return "restricted" if self.restricted.value >= self.quotient.value else "quotient"


def kifer_max_check(sys, p, V, n=DEFAULT_N, samples=DEFAULT_SAMPLES, seed=0, tol=None,
                    bias_floor=None) -> KiferReport:
    """Compare the ambient top exponent with the max over the two blocks.

    Passes when the difference is within three combined standard errors plus
    ``bias_floor`` (default ``1/n``), which covers the O(1/n) transient of
    ``(1/n) log ||A^n||`` for deterministic products whose stderr vanishes.
    """
    R = restrict(sys, V, tol)
    Qs = quotient(sys, V, tol)
    amb = top_exponent_mc(sys, p, n, samples, seed)
    res = top_exponent_mc(R, p, n, samples, seed)
    quo = top_exponent_mc(Qs, p, n, samples, seed)
    top = res if res.value >= quo.value else quo
    floor = 1.0 / n if bias_floor is None else bias_floor
    allowed = 3.0 * float(np.hypot(amb.stderr, top.stderr)) + floor
    return KiferReport(amb, res, quo, abs(amb.value - top.value) <= allowed, allowed)


# ---------------------------------------------------------------- detection


def _real_invariant_blocks(W):
    """Real invariant subspaces of W from its eigen-decomposition (1-d and 2-d pieces)."""
    vals, vecs = np.linalg.eig(W)
    blocks, used = [], set()
    for i, lam in enumerate(vals):
        if i in used:
            continue
        if abs(lam.imag) <= 1e-10 * max(1.0, abs(lam)):
            blocks.append(np.real(vecs[:, i])[:, None])
        else:
            j = next((j for j in range(len(vals)) if j != i and j not in used
                      and abs(vals[j] - np.conj(lam)) <= 1e-8 * max(1.0, abs(lam))), None)
            if j is not None:
                used.add(j)
            blocks.append(np.stack([np.real(vecs[:, i]), np.imag(vecs[:, i])], axis=1))
        used.add(i)
    return blocks


def detect_constant_section(sys: CocycleSystem, grid=None, tol=CONSTANT_TOL, seed=0,
                            words=4, word_length=3, max_combinations=512):
    """Search for a constant proper subspace invariant under every sampled fiber.

    Candidates are spans of real eigen-blocks of a few random words in the
    sampled matrices; each candidate is accepted only if ``check_invariant``
    passes on ``grid``.  Returns the first hit (smallest dimension) or None.
    Not finding a section does not prove irreducibility.
    """
    d = sys.d
    if d < 2:
        return None
    pts = _check_grid(sys, Section(basis=np.eye(d)[:, :1]), grid)
    rng = np.random.default_rng(seed)
    mats = sys.eval_all(pts).reshape(-1, d, d)
    candidates = []
    for _ in range(words):
        W = np.eye(d)
        for idx in rng.integers(0, len(mats), size=word_length):
            W = mats[idx] @ W
        W = W / np.max(np.abs(W))
        blocks = _real_invariant_blocks(W)
        count = 0
        for r in range(1, len(blocks) + 1):
            for combo in combinations(blocks, r):
                B = np.concatenate(combo, axis=1)
                if B.shape[1] >= d:
                    continue
                candidates.append(B)
                count += 1
                if count >= max_combinations:
                    break
    candidates.sort(key=lambda B: B.shape[1])
    for B in candidates:
        try:
            V = Section(basis=B)
        except RankCollapseError:
            continue
        if check_invariant(sys, V, grid=pts) <= tol:
            return V
    return None


# ---------------------------------------------------------------- chains


@dataclass
class ChainLink:
    section: Section
    restricted: CocycleSystem
    quotient: CocycleSystem
    lam_restricted: object
    lam_quotient: object
    branch: str
    defect: float

    @property
    def dims(self):
        return self.restricted.d, self.quotient.d


@dataclass
class ReductionChain:
    ambient: CocycleSystem
    links: list = field(default_factory=list)
    terminal: CocycleSystem = None
    discarded: list = field(default_factory=list)

    @property
    def dimensions(self) -> list[int]:
        dims = [self.ambient.d]
        for link in self.links:
            dims.append(link.restricted.d if link.branch == "restricted" else link.quotient.d)
        return dims

    @property
    def depth(self) -> int:
        return len(self.links)

    @property
    def top(self):
        """Estimate of the ambient top exponent attributed through the chain."""
        if not self.links:
            return None
        last = self.links[-1]
        return last.lam_restricted if last.branch == "restricted" else last.lam_quotient

    def to_dict(self) -> dict:
        out = {"ambient_d": self.ambient.d, "dimensions": self.dimensions, "links": []}
        for link in self.links:
            out["links"].append({
                "section": link.section.to_dict(),
                "k": link.section.k,
                "restricted": {"d": link.restricted.d, "value": link.lam_restricted.value,
                               "stderr": link.lam_restricted.stderr},
                "quotient": {"d": link.quotient.d, "value": link.lam_quotient.value,
                             "stderr": link.lam_quotient.stderr},
                "branch": link.branch,
                "defect": link.defect,
            })
        out["discarded"] = self.discarded
        return out


def _project(section: Section, frame: Section, use_complement: bool) -> Section:
    """Express ``section`` in the coordinates of ``frame`` (or of its complement)."""
    fn = frame.complement if use_complement else frame.frame
    if section.kind == "constant" and frame.kind == "constant":
        L = fn(np.zeros((1, 1)))[0]
        return Section(basis=L.T @ section.basis)
    grid_owner = section if section.kind == "grid" else frame
    pts = grid_owner.nodes()
    L = fn(pts)
    B = np.swapaxes(L, -1, -2) @ section.frame(pts)
    return Section(frames=B.reshape(*grid_owner.resolution, *B.shape[-2:]))


def _quotient_image(section: Section, sub: Section) -> Section:
    """``section / sub`` inside the quotient ``R^d / sub`` (requires ``sub`` in ``section``)."""
    pts = np.zeros((1, 1)) if section.kind == sub.kind == "constant" else (
        section.nodes() if section.kind == "grid" else sub.nodes())
    C = sub.complement(pts)
    S = section.frame(pts)
    P = np.swapaxes(C, -1, -2) @ S  # (B, d-k1, k2), rank k2 - k1
    U, s, _ = np.linalg.svd(P)
    r = section.k - sub.k
    B = U[..., :, :r]
    if section.kind == sub.kind == "constant":
        return Section(basis=B[0])
    owner = section if section.kind == "grid" else sub
    return Section(frames=B.reshape(*owner.resolution, *B.shape[-2:]))


def reduce_chain(sys: CocycleSystem, p, sections=(), n=DEFAULT_N, samples=DEFAULT_SAMPLES,
                 seed=0, tol=None) -> ReductionChain:
    """Inductive reduction along nested invariant sections.

    At each level the top exponents of the restricted and quotient blocks are
    estimated, the larger one is kept, and the remaining sections are carried
    into that block's coordinates (subspaces of V for the restricted branch,
    superspaces of V for the quotient branch).  Sections that no longer fit
    the chosen branch are listed in ``discarded``.
    """
    secs = sorted(sections, key=lambda s: s.k)
    for a, b in zip(secs, secs[1:]):
        if a.k == b.k or not b.contains(a):
            raise ConfigError("declared sections are not nested")
    chain = ReductionChain(sys)
    current = sys
    pending = list(secs)
    while pending:
        # pick the middle section to split the current block
        V = pending[len(pending) // 2]
        defect = _require_invariant(current, V, tol, None)
        R = restrict(current, V, tol)
        Qs = quotient(current, V, tol)
        lr = top_exponent_mc(R, p, n, samples, seed)
        lq = top_exponent_mc(Qs, p, n, samples, seed)
        branch = "restricted" if lr.value >= lq.value else "quotient"
        chain.links.append(ChainLink(V, R, Qs, lr, lq, branch, defect))
        if branch == "restricted":
            nxt = [_project(s, V, False) for s in pending if s.k < V.k]
            dropped = [s for s in pending if s.k > V.k]
            current = R
        else:
            nxt = [_quotient_image(s, V) for s in pending if s.k > V.k]
            dropped = [s for s in pending if s.k < V.k]
            current = Qs
        chain.discarded.extend(s.to_dict() for s in dropped)
        pending = nxt
    chain.terminal = current
    return chain
