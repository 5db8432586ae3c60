import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpcocycle.cocycle import constant_system
from qpcocycle.errors import CapExceeded, ConfigError
from qpcocycle.fixtures import fixture
from qpcocycle.lyapunov import (
    continuity_sweep,
    count_distinct,
    det_average,
    directional_exponent,
    directional_spread,
    orbit_samples,
    spectrum_exterior,
    spectrum_qr,
    top_exponent_mc,
)
from qpcocycle.sampling import chunk_rng, chunk_sizes, draw_paths, mean_stderr, set_workers

from conftest import well_conditioned


def replay_letters(seed, samples, n, p, m=1):
    """Letters used by the orbit stream, regenerated chunk by chunk."""
    out = []
    for c, size in enumerate(chunk_sizes(samples)):
        _, letters = draw_paths(chunk_rng(seed, "orbit", c), size, n, np.asarray(p), m)
        out.append(letters)
    return np.concatenate(out, axis=1)


class TestSampling:
    def test_prefix_common_across_lengths(self):
        p = np.array([0.3, 0.7])
        _, a = draw_paths(chunk_rng(4, "x", 0), 50, 10, p, 1)
        _, b = draw_paths(chunk_rng(4, "x", 0), 50, 20, p, 1)
        np.testing.assert_array_equal(a, b[:10])

    def test_letter_frequencies(self):
        p = np.array([0.2, 0.5, 0.3])
        _, L = draw_paths(chunk_rng(0, "x", 0), 2000, 50, p, 1)
        freq = np.bincount(L.ravel(), minlength=3) / L.size
        np.testing.assert_allclose(freq, p, atol=0.01)

    def test_streams_differ_by_tag_and_chunk(self):
        a = chunk_rng(0, "a", 0).random(4)
        assert not np.allclose(a, chunk_rng(0, "b", 0).random(4))
        assert not np.allclose(a, chunk_rng(0, "a", 1).random(4))
        np.testing.assert_array_equal(a, chunk_rng(0, "a", 0).random(4))

    def test_mean_stderr(self):
        mu, se = mean_stderr(np.array([1.0, 2.0, 3.0, 4.0]))
        assert mu == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


class TestTopExponent:
    def test_identity_is_zero(self):
        est = top_exponent_mc(fixture("identity").system, [0.5, 0.5], n=50, samples=20)
        assert est.value == 0.0 and est.stderr == 0.0

    def test_rotations_have_zero_exponent(self):
        f = fixture("rotation-band")
        est = top_exponent_mc(f.system, f.p, n=200, samples=50)
        assert abs(est.value) < 1e-12

    def test_diagonal_matches_replayed_letters(self):
        a, b = np.array([2.0, 3.0]), np.array([0.5, 1 / 3])
        f = fixture("diagonal-const", a=a, b=b)
        n, samples, p = 40, 300, np.array([0.3, 0.7])
        vals = orbit_samples(f.system, p, n, samples, seed=11)
        L = replay_letters(11, samples, n, p)
        expect = np.maximum(np.log(a)[L].sum(0), np.log(b)[L].sum(0)) / n
        np.testing.assert_allclose(vals, expect, atol=1e-12)

    def test_diagonal_near_closed_form(self):
        f = fixture("diagonal-const")
        est = top_exponent_mc(f.system, f.p, n=400, samples=256, seed=2)
        assert abs(est.value - f.exact_spectrum()[0]) < 4 * est.stderr + 1e-3

    def test_schrodinger_lower_bound(self):
        # large coupling forces positive exponent at least log(lam / 2)
        f = fixture("schrodinger-like", E=(0.0, 0.0), lam=(4.0, 4.0))
        est = top_exponent_mc(f.system, f.p, n=500, samples=64)
        assert est.value >= math.log(2.0) - 3 * est.stderr - 0.01

    def test_deterministic_and_worker_invariant(self):
        f = fixture("irreducible-2d", s=0.7)
        a = orbit_samples(f.system, f.p, 30, 600, seed=5)
        b = orbit_samples(f.system, f.p, 30, 600, seed=5)
        set_workers(3)
        try:
            c = orbit_samples(f.system, f.p, 30, 600, seed=5)
        finally:
            set_workers(1)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_bad_arguments(self):
        f = fixture("identity")
        with pytest.raises(ConfigError):
            top_exponent_mc(f.system, [0.5, 0.5], n=0)
        with pytest.raises(ConfigError):
            top_exponent_mc(f.system, [0.2, 0.3, 0.5], n=5)

    @given(st.floats(0.1, 10.0), st.integers(0, 200))
    def test_scaling_shifts_exponent(self, c, seed):
        rng = np.random.default_rng(seed)
        mats = [well_conditioned(rng, 2) for _ in range(2)]
        base = orbit_samples(constant_system(mats), [0.5, 0.5], 20, 16, seed)
        scaled = orbit_samples(constant_system([c * M for M in mats]), [0.5, 0.5], 20, 16, seed)
        np.testing.assert_allclose(scaled - base, math.log(c), atol=1e-10)


class TestSpectrum:
    def test_diagonal_exact_per_path(self):
        a, b = np.array([2.0, 3.0]), np.array([0.5, 1 / 3])
        f = fixture("diagonal-const", a=a, b=b)
        n, samples, p = 30, 64, np.array([0.5, 0.5])
        res = spectrum_qr(f.system, p, n, samples, seed=3)
        L = replay_letters(3, samples, n, p)
        la, lb = np.log(a)[L].sum(0) / n, np.log(b)[L].sum(0) / n
        np.testing.assert_allclose(res.exponents, [la.mean(), lb.mean()], atol=1e-12)

    def test_sorted_descending_and_kappa(self):
        f = fixture("triangular-const")
        res = spectrum_qr(f.system, f.p, 200, 64)
        assert np.all(np.diff(res.exponents) <= 0)
        assert res.kappa == count_distinct(res.exponents)

    def test_triangular_matches_diagonal_logs(self):
        f = fixture("triangular-const")
        res = spectrum_exterior(f.system, f.p, 1000, 128)
        np.testing.assert_allclose(res.exponents, f.exact_spectrum(), atol=5 * res.stderr.max() + 5e-3)

    @pytest.mark.parametrize("name", ["triangular-fourier", "schrodinger-like", "irreducible-2d"])
    def test_qr_sum_equals_det_average(self, name):
        f = fixture(name)
        res = spectrum_qr(f.system, f.p, 300, 128)
        tol = 3 * res.stderr.sum() + 1e-10
        assert abs(res.total - det_average(f.system, f.p)) <= tol

    def test_det_average_closed_form(self):
        f = fixture("triangular-fourier")
        assert det_average(f.system, f.p) == pytest.approx(f.exact_spectrum().sum(), abs=1e-12)

    def test_methods_agree_on_irreducible(self):
        f = fixture("irreducible-2d", s=1.0)
        a = spectrum_qr(f.system, f.p, 500, 128)
        b = spectrum_exterior(f.system, f.p, 500, 128)
        tol = 2 * np.hypot(a.stderr, b.stderr) + 2.0 / 500
        assert np.all(np.abs(a.exponents - b.exponents) <= tol)

    def test_exterior_cap(self):
        sys = constant_system([np.eye(6)])
        with pytest.raises(CapExceeded):
            spectrum_exterior(sys, [1.0], 2, 2, size_cap=10)

    def test_count_distinct(self):
        assert count_distinct([1.0, 0.995, -1.0]) == 2
        assert count_distinct([0.0, 0.0]) == 1
        assert count_distinct([]) == 0

    @given(st.integers(0, 500))
    def test_qr_sum_is_exact_log_det_per_path(self, seed):
        rng = np.random.default_rng(seed)
        mats = [well_conditioned(rng, 3) for _ in range(2)]
        sys = constant_system(mats)
        n, samples = 15, 8
        S = orbit_samples(sys, [0.4, 0.6], n, samples, seed, kind="qr")
        L = replay_letters(seed, samples, n, [0.4, 0.6])
        logdet = np.log(np.abs([np.linalg.det(M) for M in mats]))
        np.testing.assert_allclose(S.sum(1), logdet[L].sum(0) / n, atol=1e-10)


class TestDirectional:
    def test_diagonal_axis(self):
        f = fixture("diagonal-const")
        e2 = directional_exponent(f.system, f.p, [0.0, 1.0], n=100, samples=64)
        L = replay_letters(0, 64, 100, f.p)
        expect = np.log([0.5, 1 / 3])[L].sum(0).mean() / 100
        assert e2.value == pytest.approx(expect, abs=1e-12)

    def test_spread_positive_on_reducible(self):
        f = fixture("diagonal-const")
        spread, _ = directional_spread(f.system, f.p, [[1, 0], [0, 1]], 100, 64, 0)
        assert spread == pytest.approx(2 * f.exact_spectrum()[0], abs=0.1)


class TestSweep:
    def test_deltas(self):
        f = fixture("diagonal-const")
        rows = continuity_sweep(f.system, [[0.5, 0.5], [0.55, 0.45], [0.6, 0.4]], n=100, samples=64)
        assert rows[0].delta is None
        assert rows[1].delta == pytest.approx(rows[1].estimate.value - rows[0].estimate.value)

    def test_empty(self):
        with pytest.raises(ConfigError):
            continuity_sweep(fixture("identity").system, [])


class TestClosedFormExamples:
    def test_single_diagonal_generator(self):
        sys = constant_system([np.diag([2.0, 0.5])])
        est = top_exponent_mc(sys, [1.0], n=100, samples=16)
        assert est.value == pytest.approx(math.log(2), abs=1e-12)
        assert det_average(sys, [1.0]) == pytest.approx(0.0, abs=1e-15)
        assert directional_exponent(sys, [1.0], [1.0, 0.0], n=50, samples=8).value == pytest.approx(math.log(2))

    def test_identity_everything_zero(self):
        f = fixture("identity", d=3)
        assert np.all(spectrum_qr(f.system, f.p, 20, 8).exponents == 0)
        assert np.all(spectrum_exterior(f.system, f.p, 20, 8).exponents == 0)
        assert det_average(f.system, f.p) == 0.0
        assert directional_exponent(f.system, f.p, [1.0, 2.0, 3.0], 20, 8).value == 0.0

    def test_diagonal_det_average_zero(self):
        f = fixture("diagonal-const")
        assert det_average(f.system, f.p) == pytest.approx(0.0, abs=1e-15)

    def test_diagonal_spectrum_both_methods(self):
        f = fixture("diagonal-const")
        exact = f.exact_spectrum()
        for fn in (spectrum_qr, spectrum_exterior):
            res = fn(f.system, f.p, 1000, 200)
            assert np.all(np.abs(res.exponents - exact) <= 3 * res.stderr + 1e-10)

    def test_random_constant_cross_method(self):
        rng = np.random.default_rng(2024)
        sys = constant_system([well_conditioned(rng, 3, 5.0) for _ in range(3)])
        p = [0.2, 0.3, 0.5]
        a = spectrum_qr(sys, p, 2000, 400)
        b = spectrum_exterior(sys, p, 2000, 400)
        assert np.all(np.abs(a.exponents - b.exponents) <= 2 * np.hypot(a.stderr, b.stderr) + 1e-10)

    def test_sweep_linear_branch(self):
        f = fixture("diagonal-const")
        s = np.linspace(0.1, 0.9, 9)
        rows = continuity_sweep(f.system, [[x, 1 - x] for x in s], n=1000, samples=200)
        exact = s * math.log(2) + (1 - s) * math.log(3)
        for r, e in zip(rows, exact):
            assert abs(r.estimate.value - e) <= 3 * r.estimate.stderr + 1e-10

    def test_sweep_locates_kink(self):
        # lambda(s) = |s log 2 - (1 - s) log 3| with a kink at s* = log 3 / log 6
        f = fixture("diagonal-const", a=(2.0, 1 / 3), b=(0.5, 3.0))
        s = np.linspace(0.55, 0.67, 13)
        rows = continuity_sweep(f.system, [[x, 1 - x] for x in s], n=2000, samples=400)
        found = s[int(np.argmin([r.estimate.value for r in rows]))]
        assert abs(found - math.log(3) / math.log(6)) <= 0.01
        for x, r in zip(s, rows):
            if abs(x - found) > 0.03:  # away from the kink the finite-n bias vanishes
                exact = abs(x * math.log(2) - (1 - x) * math.log(3))
                assert abs(r.estimate.value - exact) <= 3 * r.estimate.stderr + 1e-10
