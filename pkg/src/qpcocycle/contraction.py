"""Projective contraction: the ratio psi_n, the functional K_n(alpha, p) and
the constants (M, n0, alpha0, zeta, C0) of exponential contraction.

``K_n(alpha, p) = sup_{u != u'} E[psi_n^alpha]`` with
``psi_n = d(A^n u, A^n u') / d(u, u')``.  The sup is approximated on a
deterministic pair grid with local refinement, so every estimate is a
statistical lower bound of the true value.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from .algebra import canonical_direction, proj_dist, svd
from .cocycle import CocycleSystem, as_probability, orbit_product, validation_grid
from .errors import CocycleError, ConfigError, NoContractionFound, SingularFiberError
from .sampling import draw_paths, map_chunks

PAIR_STREAM = "pairs"
REFINE_STREAM = "refine"
DEGENERATE_PAIR = 1e-10
DEFAULT_MC = 2000


# ---------------------------------------------------------------- pointwise


def psi_n(sys: CocycleSystem, word, t, v1, v2) -> float:
    """``d(A^n v1, A^n v2) / d(v1, v2)`` along one word from torus point ``t``."""
    u1 = canonical_direction(getattr(v1, "vector", v1))
    u2 = canonical_direction(getattr(v2, "vector", v2))
    d0 = proj_dist(u1, u2)
    if d0 <= DEGENERATE_PAIR:
        raise CocycleError("degenerate direction pair")
    P = orbit_product(sys, word, t).matrix
    return float(proj_dist(P @ u1, P @ u2) / d0)


def exp_bound_holds(x) -> np.ndarray:
    """Check ``e^x <= 1 + x + x^2 e^{|x|} / 2`` elementwise."""
    x = np.asarray(x, dtype=float)
    lhs = np.exp(x)
    rhs = 1.0 + x + 0.5 * x * x * np.exp(np.abs(x))
    return lhs <= rhs * (1 + 1e-14) + 1e-300


def lipschitz_bound_M(sys: CocycleSystem, grid=None) -> float:
    """``max_i max_t kappa(A_i(t))^2`` over a torus grid (exact for constant fibers)."""
    if grid is None:
        grid = validation_grid(sys.m, 64 if sys.m == 1 else None)
    mats = sys.eval_all(np.atleast_2d(grid)).reshape(-1, sys.d, sys.d)
    s = svd(mats).values
    if np.any(s[:, -1] <= 0):
        raise SingularFiberError("singular fiber on the Lipschitz grid")
    return float(np.max(s[:, 0] / s[:, -1]) ** 2)


# ---------------------------------------------------------------- pair grids


def _r_sequence(count, dim, offset=0):
    # additive recurrence with the generalized golden ratio
    phi = 2.0
    for _ in range(50):
        phi = (1 + phi) ** (1.0 / (dim + 1))
    a = 1.0 / phi ** np.arange(1, dim + 1)
    i = np.arange(offset + 1, offset + count + 1)[:, None]
    return np.mod(0.5 + i * a, 1.0)


def pair_grid(d: int, size: int | None = None):
    """Deterministic direction pairs ``(U1, U2)``, each of shape ``(size, d)``.

    d = 2 uses a Fibonacci lattice on the angle square; higher d maps an
    additive low-discrepancy sequence through the normal quantile function.
    Pairs closer than the degeneracy threshold are dropped.
    """
    if d < 2:
        raise ConfigError("projective pairs need d >= 2")
    if size is None:
        size = 64 if d == 2 else 256
    if d == 2:
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        i = np.arange(size)
        a = np.pi * (i + 0.5) / size
        b = np.pi * np.mod(0.5 + i * golden, 1.0)
        U1 = np.stack([np.cos(a), np.sin(a)], axis=1)
        U2 = np.stack([np.cos(b), np.sin(b)], axis=1)
    else:
        g = ndtri(_r_sequence(size, 2 * d))
        U1 = g[:, :d] / np.linalg.norm(g[:, :d], axis=1, keepdims=True)
        U2 = g[:, d:] / np.linalg.norm(g[:, d:], axis=1, keepdims=True)
    keep = proj_dist(U1, U2) > 1e-3
    return U1[keep], U2[keep]


# ---------------------------------------------------------------- table kernel


def log_psi_table(sys: CocycleSystem, p, U1, U2, n: int, samples: int, seed: int,
                  tag: str = PAIR_STREAM) -> np.ndarray:
    """``log psi_k`` for k = 1..n, every pair and every sampled path.

    Shape ``(samples, pairs, n)``.  Each path ``(x, t)`` is shared by all
    pairs.  The distance is tracked as ``area / (|A u1| |A u2|)`` with the
    area from a re-orthonormalized 2-frame, which stays accurate when the
    two images become nearly parallel.
    """
    p = as_probability(p)
    U1 = np.atleast_2d(np.asarray(U1, float))
    U2 = np.atleast_2d(np.asarray(U2, float))
    U1 = U1 / np.linalg.norm(U1, axis=1, keepdims=True)
    U2 = U2 / np.linalg.norm(U2, axis=1, keepdims=True)
    d0 = np.log(proj_dist(U1, U2))
    if np.any(~np.isfinite(d0)) or np.any(np.exp(d0) <= DEGENERATE_PAIR):
        raise CocycleError("degenerate direction pair")
    P = U1.shape[0]

    def run(rng, size, _):
        t, letters = draw_paths(rng, size, n, p, sys.m)
        X1 = np.broadcast_to(U1, (size, P, sys.d)).copy()
        X2 = np.broadcast_to(U2, (size, P, sys.d)).copy()
        F, R = np.linalg.qr(np.stack([X1, X2], axis=-1))
        area = np.log(np.abs(R[..., 0, 0] * R[..., 1, 1]))
        l1 = np.zeros((size, P))
        l2 = np.zeros((size, P))
        out = np.empty((size, P, n))
        for k in range(n):
            A = sys.batch_eval(letters[k], t)[:, None]  # (size, 1, d, d)
            X1 = (A @ X1[..., None])[..., 0]
            X2 = (A @ X2[..., None])[..., 0]
            n1 = np.linalg.norm(X1, axis=-1)
            n2 = np.linalg.norm(X2, axis=-1)
            X1 /= n1[..., None]
            X2 /= n2[..., None]
            l1 += np.log(n1)
            l2 += np.log(n2)
            F, R = np.linalg.qr(A @ F)
            area += np.log(np.abs(R[..., 0, 0] * R[..., 1, 1]))
            out[..., k] = area - l1 - l2 - d0
            t = sys.translate(letters[k], t)
        return out

    return np.concatenate(map_chunks(run, samples, seed, tag), axis=0)


def _moments(logpsi, alpha):
    """Per-pair MC means of ``psi^alpha`` (alpha > 0) or of ``log psi`` (alpha None)."""
    if alpha is None:
        return logpsi.mean(axis=0)
    return np.exp(alpha * logpsi).mean(axis=0)


def _refine(sys, p, U1, U2, target_n, samples, seed, alpha, rounds=3, width=16):
    """Local search around the best pair on common paths; returns the best value found."""
    base = _moments(log_psi_table(sys, p, U1, U2, target_n, samples, seed), alpha)[:, -1]
    i = int(np.argmax(base))
    best, b1, b2 = float(base[i]), U1[i], U2[i]
    rng = np.random.default_rng([seed, 7])
    step = 0.25
    for _ in range(rounds):
        c1 = b1 + step * rng.standard_normal((width, sys.d))
        c2 = b2 + step * rng.standard_normal((width, sys.d))
        c1 /= np.linalg.norm(c1, axis=1, keepdims=True)
        c2 /= np.linalg.norm(c2, axis=1, keepdims=True)
        ok = proj_dist(c1, c2) > 1e-3
        if np.any(ok):
            vals = _moments(log_psi_table(sys, p, c1[ok], c2[ok], target_n, samples, seed), alpha)[:, -1]
            j = int(np.argmax(vals))
            if vals[j] > best:
                best, b1, b2 = float(vals[j]), c1[ok][j], c2[ok][j]
        step /= 2
    return best, (b1, b2)


def estimate_Kn(sys, p, n, alpha, pair_grid_size=None, mc_samples=DEFAULT_MC, seed=0,
                refine=False) -> float:
    """Max over the pair grid of the MC mean of ``psi_n^alpha`` (a lower bound of K_n)."""
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    if n == 0:
        return 1.0
    U1, U2 = pair_grid(sys.d, pair_grid_size)
    if refine:
        return _refine(sys, p, U1, U2, n, mc_samples, seed, alpha)[0]
    table = log_psi_table(sys, p, U1, U2, n, mc_samples, seed)
    return float(np.max(_moments(table[..., -1:], alpha)))


def Kn_table(sys, p, n_max, alpha, pair_grid_size=None, mc_samples=DEFAULT_MC, seed=0) -> np.ndarray:
    """``K_n`` for n = 0..n_max from one shared set of paths (``K_0 = 1``)."""
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    U1, U2 = pair_grid(sys.d, pair_grid_size)
    table = log_psi_table(sys, p, U1, U2, n_max, mc_samples, seed)
    return np.concatenate([[1.0], np.max(_moments(table, alpha), axis=0)])


def drift_integral(sys, p, n, mc_samples=DEFAULT_MC, seed=0, pair_grid_size=None,
                   refine=False) -> float:
    """Max over the pair grid of the MC estimate of ``E log psi_n``."""
    U1, U2 = pair_grid(sys.d, pair_grid_size)
    if refine:
        return _refine(sys, p, U1, U2, n, mc_samples, seed, None)[0]
    table = log_psi_table(sys, p, U1, U2, n, mc_samples, seed)
    return float(np.max(table[..., -1].mean(axis=0)))


# ---------------------------------------------------------------- certificate


def alpha0_formula(n0: int, M: float) -> float:
    lm = math.log(M)
    if lm <= 0:
        return 1.0
    # computed in logs: M^n0 overflows quickly
    log_a = math.log(2.0) - 2 * math.log(n0) - 2 * math.log(lm) - n0 * lm
    return min(1.0, math.exp(log_a))


@dataclass
class ContractionCertificate:
    M: float
    n0: int
    alpha0: float
    alpha: float
    zeta: float
    C0: float
    drift: float
    Kn_table: list = field(default_factory=list)  # (n, alpha, K_n)
    drift_table: list = field(default_factory=list)  # (n, drift_n)
    mc_samples: int = 0
    pair_grid_size: int = 0
    seed: int = 0

    def envelope(self, n) -> float:
        return self.C0 * math.exp(-self.zeta * n)

    def envelope_holds(self) -> bool:
        return all(K <= self.envelope(n) * (1 + 1e-12) for n, _, K in self.Kn_table)

    @property
    def id(self) -> str:
        import hashlib

        blob = json.dumps([self.n0, self.alpha, self.zeta, self.C0, self.seed]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["certificate_id"] = self.id
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, obj: dict) -> "ContractionCertificate":
        obj = {k: v for k, v in obj.items() if k != "certificate_id"}
        obj["Kn_table"] = [tuple(r) for r in obj.get("Kn_table", [])]
        obj["drift_table"] = [tuple(r) for r in obj.get("drift_table", [])]
        return cls(**obj)


def build_certificate(sys, p, n_max=32, alpha=None, pair_grid_size=None, mc_samples=DEFAULT_MC,
                      seed=0, refine=True, table_factor=3, M_grid=None) -> ContractionCertificate:
    """Search the smallest ``n0 <= n_max`` with drift below -1, then extract constants.

    ``alpha`` defaults to ``alpha0 / 2``.  ``C0 = max_{j < n0} K_j e^{zeta j}``
    so that ``K_n <= C0 e^{-zeta n}`` follows from submultiplicativity.
    """
    p = as_probability(p)
    U1, U2 = pair_grid(sys.d, pair_grid_size)
    table = log_psi_table(sys, p, U1, U2, n_max, mc_samples, seed)
    drifts = np.max(table.mean(axis=0), axis=0)
    n0 = None
    drift = None
    for n in range(1, n_max + 1):
        if drifts[n - 1] < -1:
            d_n = drifts[n - 1]
            if refine:
                d_n = max(d_n, _refine(sys, p, U1, U2, n, mc_samples, seed, None)[0])
            if d_n < -1:
                n0, drift = n, float(d_n)
                break
    if n0 is None:
        raise NoContractionFound(
            f"drift stays above -1 up to n_max={n_max} (max drift {np.min(drifts):.3f})")
    M = lipschitz_bound_M(sys, M_grid)
    a0 = alpha0_formula(n0, M)
    a = a0 / 2 if alpha is None else float(alpha)
    if not 0 < a <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    n_tab = table_factor * n0
    if n_tab > n_max:
        table = log_psi_table(sys, p, U1, U2, n_tab, mc_samples, seed)
    K = np.concatenate([[1.0], np.max(_moments(table[..., :n_tab], a), axis=0)])
    Kn0 = float(K[n0])
    if refine:
        Kn0 = max(Kn0, _refine(sys, p, U1, U2, n0, mc_samples, seed, a)[0])
        K[n0] = Kn0
    if not Kn0 < 1:
        raise NoContractionFound(f"K_n0 = {Kn0:.6g} is not below one at alpha = {a:.3g}")
    zeta = -math.log(Kn0) / n0
    C0 = float(max(K[j] * math.exp(zeta * j) for j in range(n0)))
    return ContractionCertificate(
        M=M, n0=n0, alpha0=a0, alpha=a, zeta=zeta, C0=C0, drift=drift,
        Kn_table=[(n, a, float(K[n])) for n in range(n_tab + 1)],
        drift_table=[(n + 1, float(drifts[n])) for n in range(min(n_max, len(drifts)))],
        mc_samples=mc_samples, pair_grid_size=len(U1), seed=seed,
    )
