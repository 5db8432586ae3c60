"""Complex transfer operator, the weight domain D_gamma and the holomorphic
extension of the top exponent in the transition weights.

``T_z phi(t, v) = sum_i z_i phi(t + theta_i, A_i(t) v)``.  Its n-th iterate
is a homogeneous polynomial of degree n in ``z``.  The extension is the
limit of

    Lambda_n(z, v) = sum_j z_j * int T_z^n phi_j(t, v) dt,
    phi_j(t, v) = log(|A_j(t) v| / |v|),

which at real weights is the expected log-growth of step n + 1.  Two
evaluators are provided: exact word enumeration (small n) and importance
sampling under a fixed real proposal.  With a fixed proposal and fixed
sample paths the Monte Carlo value is itself a polynomial in ``z``, so
derivatives and contour integrals of it are exact up to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cocycle import CocycleSystem, as_probability, validation_grid
from .contraction import ContractionCertificate, build_certificate
from .errors import CapExceeded, ConfigError, DomainError, NoContractionFound
from .sampling import draw_paths, map_chunks, mean_stderr

WORD_CAP = 10 ** 6
COEFF_CAP = 10 ** 5
DEFAULT_Q = 64
DEFAULT_SAMPLES = 100_000
DEFAULT_TOL = 2e-2
N_MAX = 200
LIP_SAFETY = 1.5
SUM_TOL = 1e-12


# ---------------------------------------------------------------- weights and domain


@dataclass(frozen=True)
class ComplexWeights:
    z: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=complex))
        if z.ndim != 1 or z.size == 0 or not np.all(np.isfinite(z)):
            raise ConfigError("complex weights must be a finite non-empty vector")
        if abs(np.sum(z) - 1) > SUM_TOL * max(1.0, float(np.sum(np.abs(z)))):
            raise DomainError(f"weights must sum to one (sum = {np.sum(z)})")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    def __len__(self):
        return len(self.z)

    def to_pairs(self):
        return [[float(c.real), float(c.imag)] for c in self.z]


def as_weights(z) -> np.ndarray:
    return z.z if isinstance(z, ComplexWeights) else ComplexWeights(z).z


@dataclass(frozen=True)
class DomainGamma:
    """``{z : sum z = 1, max_i |z_i| / p_i < 1 / gamma}`` around the real point ``p``."""

    p: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "p", as_probability(self.p))
        if not 0 < self.gamma < 1:
            raise DomainError("gamma must lie in (0, 1)")

    @classmethod
    def from_certificate(cls, p, cert: ContractionCertificate, gamma=None) -> "DomainGamma":
        floor = math.exp(-cert.zeta)
        g = (1 + floor) / 2 if gamma is None else float(gamma)
        if not floor < g < 1:
            raise DomainError(f"gamma = {g:.6g} must exceed e^(-zeta) = {floor:.6g}")
        return cls(p, g)

    def ratio(self, z) -> float:
        return float(np.max(np.abs(np.asarray(z, dtype=complex)) / self.p))

    def contains(self, z) -> bool:
        z = np.asarray(z, dtype=complex)
        return abs(np.sum(z) - 1) <= SUM_TOL * max(1.0, float(np.sum(np.abs(z)))) and \
            self.ratio(z) < 1 / self.gamma

    def require(self, z):
        if not self.contains(z):
            raise DomainError(
                f"weights outside D_gamma: max |z_i|/p_i = {self.ratio(z):.6g} >= {1 / self.gamma:.6g}")

    def slice_radius(self, delta) -> float:
        """Largest r such that ``p + w delta`` stays in the domain for all ``|w| <= r``."""
        delta = np.asarray(delta, dtype=complex)
        # |p_i + w delta_i| <= p_i + r |delta_i| < p_i / gamma
        mask = np.abs(delta) > 0
        if not np.any(mask):
            return math.inf
        return float(np.min((1 / self.gamma - 1) * self.p[mask] / np.abs(delta[mask])))

    def sample(self, count, delta=None, seed=0, shrink=0.95):
        """Random points of the 1-d slice ``p + w delta`` inside the domain."""
        N = len(self.p)
        if delta is None:
            delta = np.zeros(N)
            delta[0], delta[-1] = 1.0, -1.0
        rng = np.random.default_rng(seed)
        out = []
        R = 1 / self.gamma
        big = np.max(self.p / np.maximum(np.abs(delta), 1e-300)) * R * 2
        while len(out) < count:
            w = complex(*rng.uniform(-big, big, 2))
            z = self.p + w * np.asarray(delta)
            if self.ratio(z) < shrink * R:
                out.append(z)
        return np.array(out)


def default_gamma(cert: ContractionCertificate) -> float:
    return (1 + math.exp(-cert.zeta)) / 2


# ---------------------------------------------------------------- test functions


def phi_j(sys: CocycleSystem, j: int, t, v) -> np.ndarray | float:
    """``log(|A_j(t) v| / |v|)``; ``t`` of shape (m,) or (B, m), ``v`` (d,) or (B, d)."""
    t_arr = np.atleast_2d(np.asarray(t, dtype=float))
    V = np.atleast_2d(np.asarray(v, dtype=float))
    A = sys.generators[j].fiber.batch(t_arr)
    W = np.einsum("bij,bj->bi", A, np.broadcast_to(V, (A.shape[0], V.shape[1])))
    out = np.log(np.linalg.norm(W, axis=1) / np.linalg.norm(V, axis=1))
    scalar = np.ndim(t) == 1 and np.ndim(v) == 1
    return float(out[0]) if scalar else out


def phi_function(sys, j):
    """``phi_j`` as a batched callable ``(t (B, m), X (B, d)) -> (B,)``."""
    return lambda t, X: phi_j(sys, j, t, X)


def lip_bound_phi(sys: CocycleSystem, v_grid=None, t_grid=None, safety=LIP_SAFETY) -> float:
    """Grid sup of ``|phi_j(t, v) - phi_j(t, v')| / d(v, v')`` times ``safety``."""
    d = sys.d
    if d == 1:
        return 0.0
    if v_grid is None:
        if d == 2:
            a = np.pi * np.arange(64) / 64
            v_grid = np.stack([np.cos(a), np.sin(a)], axis=1)
        else:
            v_grid = np.random.default_rng(0).standard_normal((64, d))
    V = np.asarray(v_grid, dtype=float)
    V = V / np.linalg.norm(V, axis=1, keepdims=True)
    if t_grid is None:
        t_grid = validation_grid(sys.m, 64 if sys.m == 1 else None)
    i, k = np.triu_indices(len(V), 1)
    # projective distance of all pairs via |sin| = sqrt(1 - cos^2)
    cos = np.abs(V @ V.T)[i, k]
    dist = np.sqrt(np.maximum(0.0, 1 - cos ** 2))
    keep = dist > 1e-8
    i, k, dist = i[keep], k[keep], dist[keep]
    best = 0.0
    for g in sys.generators:
        A = g.fiber.batch(np.atleast_2d(t_grid))  # (T, d, d)
        logn = np.log(np.linalg.norm(np.einsum("tij,vj->tvi", A, V), axis=2))  # (T, nv)
        best = max(best, float(np.max(np.abs(logn[:, i] - logn[:, k]) / dist)))
    return safety * best


# ---------------------------------------------------------------- word enumeration


def _enumerate(sys, n, t, v, cap=WORD_CAP):
    """All words of length n from one start: (counts (W, N), end t (W, m), end unit X (W, d))."""
    if sys.N ** n > cap:
        raise CapExceeded(f"N^n = {sys.N}^{n} exceeds the word cap {cap}")
    t = np.atleast_2d(np.asarray(t, dtype=float)).reshape(1, sys.m)
    X = np.asarray(v, dtype=float).reshape(1, sys.d)
    X = X / np.linalg.norm(X)
    counts = np.zeros((1, sys.N), dtype=np.int64)
    for _ in range(n):
        ts, Xs, cs = [], [], []
        for j, g in enumerate(sys.generators):
            Y = np.einsum("bij,bj->bi", g.fiber.batch(t), X)
            Xs.append(Y / np.linalg.norm(Y, axis=1, keepdims=True))
            ts.append(np.mod(t + g.theta, 1.0))
            c = counts.copy()
            c[:, j] += 1
            cs.append(c)
        t, X, counts = np.concatenate(ts), np.concatenate(Xs), np.concatenate(cs)
    return counts, t, X


def _monomials(counts, z):
    return np.prod(np.asarray(z, dtype=complex)[None, :] ** counts, axis=1)


def apply_Tz_exact(sys, phi, z, n, t, v, cap=WORD_CAP, require_simplex=True) -> complex:
    """``T_z^n phi(t, v)`` by summing over all ``N^n`` words."""
    z = as_weights(z) if require_simplex else np.asarray(z, dtype=complex)
    counts, tn, Xn = _enumerate(sys, n, t, v, cap)
    vals = phi(tn, Xn)
    return complex(np.sum(_monomials(counts, z) * vals))


def poly_coeffs_Tz(sys, phi, n, t, v, cap=COEFF_CAP, word_cap=WORD_CAP) -> dict:
    """Coefficients of ``T_z^n phi(t, v)`` as a polynomial in ``z``, keyed by exponent tuples."""
    if math.comb(n + sys.N - 1, sys.N - 1) > cap:
        raise CapExceeded("number of degree-n monomials exceeds the coefficient cap")
    counts, tn, Xn = _enumerate(sys, n, t, v, word_cap)
    vals = phi(tn, Xn)
    keys, inv = np.unique(counts, axis=0, return_inverse=True)
    sums = np.bincount(inv.ravel(), weights=vals, minlength=len(keys))
    return {tuple(int(x) for x in k): float(s) for k, s in zip(keys, sums)}


def eval_poly(coeffs: dict, z) -> complex:
    z = np.asarray(z, dtype=complex)
    return complex(sum(c * np.prod(z ** np.array(k)) for k, c in coeffs.items()))


def apply_Tz_importance(sys, phi, z, p, n, t, v, samples=DEFAULT_SAMPLES, seed=0,
                        control=True):
    """Importance-sampled ``T_z^n phi(t, v)`` with letters drawn from ``p``.

    Uses ``E_p[prod_k (z_{x_k} / p_{x_k}) phi(...)]``.  With ``control`` the
    mean of ``phi`` from an independent pilot run is subtracted inside the
    expectation and added back times ``E[W] = (sum z)^n``, which keeps the
    estimator unbiased.  Returns ``(value, stderr)``.
    """
    z = as_weights(z)
    p = as_probability(p)
    if len(z) != sys.N or len(p) != sys.N:
        raise ConfigError("weight vectors must have one entry per generator")
    lr = np.log(z / p)
    t0 = np.asarray(t, dtype=float).reshape(1, sys.m)
    v0 = np.asarray(v, dtype=float).reshape(1, sys.d)
    v0 = v0 / np.linalg.norm(v0)

    def endpoints(rng, size):
        _, letters = draw_paths(rng, size, n, p, sys.m)
        tt = np.repeat(t0, size, axis=0)
        X = np.repeat(v0, size, axis=0)
        logw = np.zeros(size, dtype=complex)
        for k in range(n):
            Y = np.einsum("bij,bj->bi", sys.batch_eval(letters[k], tt), X)
            X = Y / np.linalg.norm(Y, axis=1, keepdims=True)
            tt = sys.translate(letters[k], tt)
            logw += lr[letters[k]]
        return phi(tt, X), np.exp(logw)

    c = 0.0
    if control:
        pilot = map_chunks(lambda rng, size, _: endpoints(rng, size)[0],
                           max(256, samples // 10), seed, "tz-pilot")
        c = float(np.mean(np.concatenate(pilot)))

    parts = map_chunks(lambda rng, size, _: (lambda f, w: w * (f - c))(*endpoints(rng, size)),
                       samples, seed, "tz")
    mu, se = mean_stderr(np.concatenate(parts))
    return complex(mu + c * np.sum(z) ** n), float(se)


# ---------------------------------------------------------------- Lambda_n ensembles


class _Ensemble:
    """Everything needed to evaluate ``Lambda_k(z)``, k = 0..n, at any ``z``.

    ``exact``: per depth, unique letter-count vectors with the quadrature
    sums of the log-increments (split over even and odd nodes).
    ``mc``: per path, cumulative letter counts and log-increments, plus a
    pilot mean per depth used as control variate.
    """

    def __init__(self, sys, p, v, n, Q=DEFAULT_Q, estimator="auto", samples=DEFAULT_SAMPLES,
                 seed=0, cap=WORD_CAP):
        self.sys, self.n, self.Q = sys, int(n), int(Q)
        self.p = as_probability(p)
        if len(self.p) != sys.N:
            raise ConfigError("proposal length differs from generator count")
        v = np.asarray(v, dtype=float).reshape(sys.d)
        self.v = v / np.linalg.norm(v)
        nodes = self.Q ** sys.m
        if estimator == "auto":
            estimator = "exact" if sys.N ** (self.n + 1) * nodes <= cap else "mc"
        if estimator == "exact" and sys.N ** (self.n + 1) * nodes > cap:
            raise CapExceeded(f"exact enumeration needs {sys.N}^{self.n + 1} x {nodes} orbits")
        self.estimator = estimator
        self.samples = samples
        if estimator == "exact":
            self._build_exact()
        elif estimator == "mc":
            self._build_mc(samples, seed)
        else:
            raise ConfigError(f"unknown estimator {estimator!r}")

    def _build_exact(self):
        sys = self.sys
        grid = validation_grid(sys.m, self.Q)
        nq = len(grid)
        parity = (np.round(grid[:, 0] * self.Q).astype(int) % 2)
        t = grid
        X = np.repeat(self.v[None], nq, axis=0)
        counts = np.zeros((nq, sys.N), dtype=np.int64)
        par = parity
        self.levels = []
        for _ in range(self.n + 1):
            ts, Xs, cs, incs, ps = [], [], [], [], []
            for j, g in enumerate(sys.generators):
                Y = np.einsum("bij,bj->bi", g.fiber.batch(t), X)
                nrm = np.linalg.norm(Y, axis=1)
                incs.append(np.log(nrm))
                Xs.append(Y / nrm[:, None])
                ts.append(np.mod(t + g.theta, 1.0))
                c = counts.copy()
                c[:, j] += 1
                cs.append(c)
                ps.append(par)
            t, X, counts = np.concatenate(ts), np.concatenate(Xs), np.concatenate(cs)
            inc, par = np.concatenate(incs), np.concatenate(ps)
            keys, inv = np.unique(counts, axis=0, return_inverse=True)
            inv = inv.ravel()
            tot = np.bincount(inv, weights=inc, minlength=len(keys)) / nq
            even = np.bincount(inv, weights=inc * (par == 0), minlength=len(keys)) / max(1, np.sum(parity == 0))
            odd = np.bincount(inv, weights=inc * (par == 1), minlength=len(keys)) / max(1, np.sum(parity == 1))
            self.levels.append((keys, tot, even, odd))

    def _build_mc(self, samples, seed):
        sys, n, p = self.sys, self.n, self.p

        def run(rng, size, _):
            t, letters = draw_paths(rng, size, n + 1, p, sys.m)
            X = np.repeat(self.v[None], size, axis=0)
            inc = np.empty((size, n + 1))
            counts = np.zeros((size, n + 1, sys.N), dtype=np.int32)
            running = np.zeros((size, sys.N), dtype=np.int32)
            rows = np.arange(size)
            for k in range(n + 1):
                Y = np.einsum("bij,bj->bi", sys.batch_eval(letters[k], t), X)
                nrm = np.linalg.norm(Y, axis=1)
                inc[:, k] = np.log(nrm)
                X = Y / nrm[:, None]
                running[rows, letters[k]] += 1
                counts[:, k] = running
                t = sys.translate(letters[k], t)
            return counts, inc

        parts = map_chunks(run, samples, seed, "lambda")
        self.counts = np.concatenate([c for c, _ in parts])
        self.inc = np.concatenate([i for _, i in parts])
        pilot = map_chunks(lambda rng, size, i: run(rng, size, i)[1],
                           max(256, samples // 10), seed, "lambda-pilot")
        self.control = np.concatenate(pilot).mean(axis=0)

    def evaluate(self, z):
        """Arrays over k = 0..n: values (complex), MC stderr, quadrature error."""
        z = np.asarray(z, dtype=complex)
        if self.estimator == "exact":
            vals, quad = [], []
            for keys, tot, even, odd in self.levels:
                mono = _monomials(keys, z)
                vals.append(np.sum(mono * tot))
                quad.append(abs(np.sum(mono * even) - np.sum(mono * odd)) / 2)
            return np.array(vals), np.zeros(self.n + 1), np.array(quad)
        lr = np.log(z / self.p)
        W = np.exp(self.counts @ lr)  # (S, n+1)
        total = np.sum(z) ** np.arange(1, self.n + 2)
        mu, se = mean_stderr(W * (self.inc - self.control[None, :]))
        return mu + self.control * total, se, np.zeros(self.n + 1)


# ---------------------------------------------------------------- evaluations


@dataclass
class AnalyticEval:
    value: complex
    mc_stderr: float
    tail_bound: float
    n: int
    quad_error: float = 0.0
    z: np.ndarray = None
    gamma: float | None = None
    certificate_id: str | None = None
    estimator: str = "exact"
    sequence: np.ndarray = field(default=None, repr=False)
    sequence_stderr: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.tail_bound < 0:
            raise ValueError("tail bound must be non-negative")

    @property
    def budget(self) -> float:
        """Total error budget: tail + 3 MC standard errors + quadrature."""
        return self.tail_bound + 3 * self.mc_stderr + self.quad_error

    def to_dict(self) -> dict:
        return {
            "z": [[float(c.real), float(c.imag)] for c in np.atleast_1d(self.z)] if self.z is not None else None,
            "value": [float(self.value.real), float(self.value.imag)],
            "stderr": self.mc_stderr,
            "tail_bound": self.tail_bound,
            "quad_error": self.quad_error,
            "n": self.n,
            "gamma": self.gamma,
            "certificate_id": self.certificate_id,
            "estimator": self.estimator,
        }


def tail_bound(cert: ContractionCertificate, gamma: float, N: int, L: float, n: int) -> float:
    """``C0 N L / gamma * sum_{k >= n} (e^-zeta / gamma)^k``; infinite if the ratio is >= 1."""
    rho = math.exp(-cert.zeta) / gamma
    if rho >= 1:
        return math.inf
    return cert.C0 * N * L / gamma * rho ** n / (1 - rho)


def n_for_tolerance(cert, gamma, N, L, tol, n_max=N_MAX) -> int:
    if L == 0:
        return 0
    rho = math.exp(-cert.zeta) / gamma
    if rho >= 1:
        raise DomainError(f"gamma = {gamma:.6g} does not exceed e^(-zeta) = {math.exp(-cert.zeta):.6g}")
    lead = cert.C0 * N * L / gamma / (1 - rho)
    n = max(0, math.ceil(math.log(tol / lead) / math.log(rho))) if lead > tol else 0
    if n > n_max:
        raise CapExceeded(f"tolerance {tol:g} needs n = {n} > {n_max}")
    return n


def _default_v(d):
    v = np.zeros(d)
    v[0] = 1.0
    return v


def Lambda_sequence(sys, z, v=None, n=10, Q=DEFAULT_Q, estimator="auto", samples=DEFAULT_SAMPLES,
                    seed=0, p=None, certificate=None, gamma=None, L=None):
    """``Lambda_k(z, v)`` for k = 0..n on one shared ensemble.

    Returns ``(values, stderr, quad_error, tails)``; tails are infinite
    without a certificate (zero for one-dimensional systems).
    """
    z = as_weights(z)
    p = as_probability(p if p is not None else _real_center(z))
    v = _default_v(sys.d) if v is None else v
    ens = _Ensemble(sys, p, v, n, Q, estimator, samples, seed)
    vals, se, quad = ens.evaluate(z)
    tails = _tails(sys, certificate, gamma, L, n)
    return vals, se, quad, tails


def _real_center(z):
    q = np.clip(np.real(np.asarray(z, dtype=complex)), 1e-3, None)
    return q / q.sum()


def _tails(sys, cert, gamma, L, n):
    if sys.d == 1:
        return np.zeros(n + 1)
    if cert is None:
        return np.full(n + 1, math.inf)
    g = default_gamma(cert) if gamma is None else gamma
    L = lip_bound_phi(sys) if L is None else L
    return np.array([tail_bound(cert, g, sys.N, L, k) for k in range(n + 1)])


def Lambda_n(sys, z, v=None, n=10, Q=DEFAULT_Q, estimator="auto", samples=DEFAULT_SAMPLES, seed=0,
             p=None, certificate=None, gamma=None) -> AnalyticEval:
    """``Lambda_n(z, v)`` with its tail bound from the contraction certificate."""
    if sys.d > 1 and certificate is None:
        raise ConfigError("a contraction certificate is required for the tail bound")
    zz = as_weights(z)
    if certificate is not None:
        g = default_gamma(certificate) if gamma is None else gamma
        dom = DomainGamma.from_certificate(p if p is not None else _real_center(zz), certificate, g)
        dom.require(zz)
        gamma = g
    vals, se, quad, tails = Lambda_sequence(sys, zz, v, n, Q, estimator, samples, seed, p,
                                            certificate, gamma)
    est = "exact" if sys.N ** (n + 1) * Q ** sys.m <= WORD_CAP and estimator != "mc" else "mc"
    return AnalyticEval(complex(vals[-1]), float(se[-1]), float(tails[-1]), n, float(quad[-1]),
                        np.asarray(zz), gamma, certificate.id if certificate else None, est,
                        vals, se)


def cesaro(seq) -> np.ndarray:
    """Running arithmetic means of a sequence."""
    s = np.asarray(seq)
    return np.cumsum(s) / np.arange(1, len(s) + 1)


# ---------------------------------------------------------------- reduction to a terminal block


def terminal_block(sys: CocycleSystem, p, n=2000, samples=200, seed=0, sections=None):
    """Follow constant invariant sections down to the block that carries the top exponent.

    Declared ``sections`` are used first; afterwards constant sections are
    detected automatically.  Returns the terminal system (possibly ``sys``).
    """
    from .reduction import detect_constant_section, reduce_chain

    current = sys
    if sections:
        current = reduce_chain(sys, p, sections, n, samples, seed).terminal
    while current.d > 1:
        V = detect_constant_section(current, seed=seed)
        if V is None:
            break
        current = reduce_chain(current, p, [V], n, samples, seed).terminal
    return current


class AnalyticModel:
    """Reusable evaluator of the extension near ``p``: one ensemble, many ``z``.

    For systems with d > 1 a contraction certificate fixes ``gamma`` and the
    tail bound; ``n`` is the smallest order meeting ``tol``.  One-dimensional
    (terminal) blocks are exact at n = 0.
    """

    def __init__(self, sys, p, gamma=None, certificate=None, tol=DEFAULT_TOL, v=None, Q=DEFAULT_Q,
                 estimator="auto", samples=DEFAULT_SAMPLES, seed=0, n=None, n_max=N_MAX,
                 reduce=False, cert_params=None):
        p = as_probability(p)
        if reduce:
            sys = terminal_block(sys, p, seed=seed)
        self.sys, self.p = sys, p
        if sys.d == 1:
            self.cert, self.L = certificate, 0.0
            self.gamma = gamma if gamma is not None else (default_gamma(certificate) if certificate else 0.5)
            self.n = 0 if n is None else n
        else:
            if certificate is None:
                if cert_params is None:
                    raise ConfigError("a contraction certificate is required for d > 1")
                certificate = build_certificate(sys, p, seed=seed, **cert_params)
            self.cert = certificate
            self.gamma = default_gamma(certificate) if gamma is None else float(gamma)
            self.L = lip_bound_phi(sys)
            self.n = n_for_tolerance(certificate, self.gamma, sys.N, self.L, tol, n_max) if n is None else n
        self.domain = DomainGamma(p, self.gamma)
        if self.cert is not None:
            DomainGamma.from_certificate(p, self.cert, self.gamma)
        self.tail = 0.0 if sys.d == 1 else tail_bound(self.cert, self.gamma, sys.N, self.L, self.n)
        self.ensemble = _Ensemble(sys, p, _default_v(sys.d) if v is None else v, self.n, Q,
                                  estimator, samples, seed)

    def __call__(self, z, check=True) -> AnalyticEval:
        zz = np.asarray(z, dtype=complex)
        if check:
            as_weights(zz)
            self.domain.require(zz)
        vals, se, quad = self.ensemble.evaluate(zz)
        return AnalyticEval(complex(vals[-1]), float(se[-1]), float(self.tail), self.n, float(quad[-1]),
                            zz, self.gamma, self.cert.id if self.cert else None,
                            self.ensemble.estimator, vals, se)

    def values(self, Z) -> np.ndarray:
        """Values at many weight vectors (rows of ``Z``), no domain checks."""
        return np.array([self.ensemble.evaluate(z)[0][-1] for z in np.atleast_2d(Z)])


def analytic_lambda(sys, p, gamma, z, certificate=None, tol=DEFAULT_TOL, **params) -> AnalyticEval:
    """Extension of the top exponent at ``z`` with a total error budget."""
    return AnalyticModel(sys, p, gamma, certificate, tol, **params)(z)


# ---------------------------------------------------------------- Taylor and holomorphy


@dataclass
class TaylorResult:
    coeffs: np.ndarray
    budget: np.ndarray
    radius: float
    nodes: int
    n: int


def _slice_check(model: AnalyticModel, delta, r):
    delta = np.asarray(delta, dtype=complex)
    if abs(np.sum(delta)) > 1e-12:
        raise ConfigError("slice direction must sum to zero")
    rmax = model.domain.slice_radius(delta)
    if not r < rmax:
        raise DomainError(f"circle radius {r:g} leaves D_gamma (max {rmax:.6g})")
    return delta


def taylor_coeffs(sys, p, gamma, delta, r, K, certificate=None, nodes=None, model=None,
                  **params) -> TaylorResult:
    """``c_k = (1 / 2 pi i) oint lambda(p + w delta) w^-(k+1) dw``, k = 0..K-1, by the trapezoid rule."""
    model = model or AnalyticModel(sys, p, gamma, certificate, **params)
    delta = _slice_check(model, delta, r)
    L = max(32, 2 * K + 2) if nodes is None else int(nodes)
    if L < 32:
        raise ConfigError("at least 32 quadrature nodes are required")
    w = r * np.exp(2j * np.pi * np.arange(L) / L)
    vals, ses = [], []
    for wl in w:
        ev = model(model.p + wl * delta)
        vals.append(ev.value)
        ses.append(ev.budget)
    F = np.fft.fft(np.array(vals)) / L
    k = np.arange(K)
    c = F[:K] / r ** k
    err = max(ses) / r ** k
    return TaylorResult(c, err, r, L, model.n)


@dataclass
class HolomorphyReport:
    points: np.ndarray
    residuals: np.ndarray
    derivative: np.ndarray
    step: float

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals))

    def relative(self, scale) -> float:
        return self.max_residual / abs(scale)


def disk_grid(radius, size=5):
    """``size x size`` square grid inscribed in the disk of the given radius."""
    s = radius / math.sqrt(2)
    x = np.linspace(-s, s, size)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return (X + 1j * Y).ravel()


def verify_holomorphy(sys, p, gamma, delta, grid=None, certificate=None, radius=None, h=None,
                      model=None, **params) -> HolomorphyReport:
    """Cauchy-Riemann residual ``|dF/dx + i dF/dy|`` of ``F(w) = lambda(p + w delta)``."""
    model = model or AnalyticModel(sys, p, gamma, certificate, **params)
    delta = np.asarray(delta, dtype=complex)
    rmax = model.domain.slice_radius(delta)
    if grid is None:
        grid = disk_grid(0.5 * rmax if radius is None else radius)
    grid = np.asarray(grid, dtype=complex)
    h = 1e-4 * max(float(np.max(np.abs(grid))), 1e-3) if h is None else h
    if np.max(np.abs(grid)) + h >= rmax:
        raise DomainError("holomorphy grid leaves D_gamma")

    def F(w):
        return model(model.p + w * delta).value

    res, der = [], []
    for w in grid:
        fx = (F(w + h) - F(w - h)) / (2 * h)
        fy = (F(w + 1j * h) - F(w - 1j * h)) / (2 * h)
        res.append(abs(fx + 1j * fy))
        der.append(fx)
    return HolomorphyReport(grid, np.array(res), np.array(der), h)


def finite_difference_c1(sys, p, delta, h=1e-2, n=2000, samples=400, seed=0):
    """``(lambda(p + h delta) - lambda(p - h delta)) / 2h`` on coupled paths; returns (value, stderr)."""
    from .lyapunov import orbit_samples

    p = as_probability(p)
    delta = np.real(np.asarray(delta, dtype=complex))
    a = orbit_samples(sys, p + h * delta, n, samples, seed)
    b = orbit_samples(sys, p - h * delta, n, samples, seed)
    mu, se = mean_stderr((a - b) / (2 * h))
    return float(mu), float(se)


# ---------------------------------------------------------------- spectrum


def spectrum_extension(sys, p, z, gamma=None, tol=DEFAULT_TOL, cert_params=None, seed=0,
                       **params):
    """Extended exponents ``lambda_k(z) = Lambda(wedge_k, z) - Lambda(wedge_{k-1}, z)``.

    Each exterior power is reduced along detected constant sections before
    its extension is evaluated.  Returns ``(values, budgets)``.
    """
    cert_params = {"alpha": 0.5} if cert_params is None else cert_params
    tops, budgets = [0j], [0.0]
    for k in range(1, sys.d + 1):
        block = terminal_block(sys.exterior(k), p, seed=seed)
        g = gamma
        cert = None
        if block.d > 1:
            try:
                cert = build_certificate(block, p, seed=seed, **cert_params)
            except NoContractionFound as exc:
                raise NoContractionFound(f"exterior power {k}: {exc}") from exc
            g = None
        ev = AnalyticModel(block, p, g, cert, tol, seed=seed, **params)(z)
        tops.append(ev.value)
        budgets.append(ev.budget)
    tops = np.array(tops)
    return np.diff(tops), np.array(budgets[1:]) + np.array(budgets[:-1])
