import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpcocycle.algebra import wrap
from qpcocycle.cocycle import (
    GOLDEN,
    CocycleSystem,
    Constant,
    Fourier,
    Generator,
    GridSampled,
    ProbabilityVector,
    constant_system,
    eval_fiber,
    fixture,
    group_compose,
    orbit_product,
)
from qpcocycle.errors import ConfigError, SingularFiberError

from conftest import well_conditioned


def random_fourier(rng, d=2, kmax=2, m=1, shift=3.0):
    freqs = [[k] + [0] * (m - 1) for k in range(kmax + 1)]
    C = 0.3 * rng.standard_normal((kmax + 1, d, d))
    S = 0.3 * rng.standard_normal((kmax + 1, d, d))
    C[0] += shift * np.eye(d)
    return Fourier(freqs, C, S)


def seeded_system(seed, d=2, N=3):
    rng = np.random.default_rng(seed)
    gens = []
    for i in range(N):
        fib = random_fourier(rng, d) if i % 2 == 0 else Constant(well_conditioned(rng, d))
        gens.append(Generator(rng.random(1), fib, True))
    return CocycleSystem(gens)


class TestEvalFiber:
    def test_constant(self):
        M = np.array([[2.0, 1.0], [0.0, 1.0]])
        g = Generator([0.3], Constant(M))
        np.testing.assert_array_equal(eval_fiber(g, [0.77]), M)

    def test_zero_frequency_only(self):
        C0 = np.array([[1.0, 2.0], [3.0, 4.0]])
        f = Fourier([[0]], [C0], [np.zeros((2, 2))])
        for t in (0.0, 0.3, 0.9):
            np.testing.assert_allclose(f([t]), C0)

    def test_pointwise_formula(self):
        C = np.array([[1.0, 0.0], [0.0, 0.0]])
        base = np.eye(2) * 2
        f = Fourier([[0], [1]], [base, C], [np.zeros((2, 2)), np.zeros((2, 2))])
        for t in np.linspace(0, 1, 9, endpoint=False):
            expect = base + C * math.cos(2 * math.pi * t)
            np.testing.assert_allclose(f([t]), expect, atol=1e-14)
        np.testing.assert_allclose(f([0.25]), base, atol=1e-15)

    def test_multidimensional_frequency(self, rng):
        C = rng.standard_normal((2, 2, 2))
        S = rng.standard_normal((2, 2, 2))
        f = Fourier([[1, 2], [0, 1]], C, S)
        t = np.array([0.13, 0.71])
        expect = sum(
            C[i] * math.cos(2 * math.pi * k @ t) + S[i] * math.sin(2 * math.pi * k @ t)
            for i, k in enumerate(np.array([[1, 2], [0, 1]]))
        )
        np.testing.assert_allclose(f(t), expect, atol=1e-12)

    def test_negative_frequency_canonicalized(self, rng):
        C, S = rng.standard_normal((2, 1, 2, 2))
        f = Fourier([[-1]], C, S)
        for t in (0.1, 0.4):
            expect = C[0] * math.cos(-2 * math.pi * t) + S[0] * math.sin(-2 * math.pi * t)
            np.testing.assert_allclose(f([t]), expect, atol=1e-14)

    def test_grid_interpolation_is_exact_at_nodes_and_linear_between(self):
        vals = np.stack([np.eye(2) * (1 + k) for k in range(4)])
        g = GridSampled(vals)
        np.testing.assert_allclose(g([0.25]), 2 * np.eye(2))
        np.testing.assert_allclose(g([0.125]), 1.5 * np.eye(2))
        np.testing.assert_allclose(g([0.875]), 2.5 * np.eye(2))  # wraps to node 0

    def test_singular_rejected(self):
        with pytest.raises(SingularFiberError):
            Generator([0.1], Constant(np.zeros((2, 2))))
        with pytest.raises(SingularFiberError):
            Generator([0.1], Fourier([[1]], [np.eye(2)], [np.zeros((2, 2))]))


class TestOrbitProduct:
    def test_empty_word(self):
        sys = seeded_system(0)
        out = orbit_product(sys, [], [0.3])
        np.testing.assert_array_equal(out.full(), np.eye(2))
        assert out.t[0] == pytest.approx(0.3)

    def test_constant_matches_reversed_product(self, rng):
        mats = [well_conditioned(rng, 3) for _ in range(3)]
        sys = constant_system(mats)
        word = [0, 2, 1, 1, 0]
        expect = np.eye(3)
        for j in word:
            expect = mats[j] @ expect
        for t in (0.0, 0.4):
            np.testing.assert_allclose(orbit_product(sys, word, [t]).full(), expect, rtol=1e-12)

    def test_end_point(self):
        sys = seeded_system(1)
        word = [0, 1, 2, 2]
        t = np.array([0.2])
        out = orbit_product(sys, word, t)
        expect = wrap(t + sum(sys.thetas[j] for j in word))
        np.testing.assert_allclose(out.t, expect, atol=1e-14)

    def test_split_identity(self):
        sys = seeded_system(2)
        word = [0, 1, 2, 0, 2, 1, 1]
        t = np.array([0.37])
        full = orbit_product(sys, word, t)
        a = orbit_product(sys, word[:4], t)
        b = orbit_product(sys, word[4:], a.t)
        np.testing.assert_allclose(b.full() @ a.full(), full.full(), rtol=1e-10)

    @pytest.mark.parametrize("seed", [3, 4, 5])
    def test_cocycle_identity_all_splits(self, seed):
        sys = seeded_system(seed)
        rng = np.random.default_rng(seed)
        for t in np.arange(16) / 16:
            word = list(rng.integers(0, sys.N, 10))
            full = orbit_product(sys, word, [t]).full()
            for cut in range(11):
                a = orbit_product(sys, word[:cut], [t])
                b = orbit_product(sys, word[cut:], a.t)
                err = np.linalg.norm(b.full() @ a.full() - full) / np.linalg.norm(full)
                assert err <= 1e-9

    def test_first_factor_uses_start_point(self):
        # A^2_x(t) = A_{x1}(t + theta_{x0}) A_{x0}(t)
        sys = seeded_system(6)
        t = np.array([0.21])
        g0, g1 = sys.generators[0], sys.generators[1]
        expect = g1.fiber(wrap(t + g0.theta)) @ g0.fiber(t)
        np.testing.assert_allclose(orbit_product(sys, [0, 1], t).full(), expect, rtol=1e-12)

    def test_renormalized_log_norm_long_orbit(self, rng):
        mats = [well_conditioned(rng, 3, kappa=10.0) for _ in range(2)]
        sys = constant_system(mats)
        word = list(rng.integers(0, 2, 10_000))
        out = orbit_product(sys, word, [0.0])
        # reference: accumulate the log norm with an independent renormalization
        P = np.eye(3)
        ref = 0.0
        for j in word:
            P = mats[j] @ P
            nrm = np.linalg.norm(P, 2)
            P /= nrm
            ref += math.log(nrm)
        assert out.log_norm() == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_constant_system_independent_of_t(self, rng):
        sys = constant_system([well_conditioned(rng, 2) for _ in range(2)])
        a = orbit_product(sys, [0, 1, 1], [0.1]).full()
        b = orbit_product(sys, [0, 1, 1], [0.8]).full()
        np.testing.assert_array_equal(a, b)

    def test_bad_letter(self):
        with pytest.raises(ConfigError):
            orbit_product(seeded_system(0), [7], [0.0])


class TestGroupCompose:
    def test_identity_element(self, rng):
        g1 = Generator([0.3], random_fourier(rng))
        e = Generator([0.0], Constant(np.eye(2)))
        c = group_compose(e, g1)
        for t in np.linspace(0, 1, 7):
            np.testing.assert_allclose(c.fiber([t]), g1.fiber([t]), atol=1e-12)
        assert c.theta[0] == pytest.approx(0.3)

    def test_constants(self, rng):
        A, B = well_conditioned(rng, 2), well_conditioned(rng, 2)
        c = group_compose(Generator([0.7], Constant(B)), Generator([0.6], Constant(A)))
        assert isinstance(c.fiber, Constant)
        np.testing.assert_allclose(c.fiber.matrix, B @ A)
        assert c.theta[0] == pytest.approx(0.3)

    def test_fourier_pointwise(self, rng):
        g2 = Generator([0.41], random_fourier(rng, kmax=1))
        g1 = Generator([0.23], random_fourier(rng, kmax=1))
        c = group_compose(g2, g1)
        assert isinstance(c.fiber, Fourier)
        for t in np.arange(20) / 20:
            expect = g2.fiber(wrap(np.array([t]) + g1.theta)) @ g1.fiber([t])
            np.testing.assert_allclose(c.fiber([t]), expect, atol=1e-10)

    def test_mixed_constant_fourier(self, rng):
        g2 = Generator([0.41], Constant(well_conditioned(rng, 2)))
        g1 = Generator([0.23], random_fourier(rng, kmax=2))
        c = group_compose(g2, g1)
        for t in np.arange(10) / 10:
            np.testing.assert_allclose(c.fiber([t]), g2.fiber([t]) @ g1.fiber([t]), atol=1e-10)

    def test_grid_resampled(self, rng):
        g2 = Generator([0.25], GridSampled.sample(lambda t: np.eye(2) * (2 + np.cos(2 * np.pi * t[..., 0]))[..., None, None], 1, 64))
        g1 = Generator([0.5], Constant(np.diag([2.0, 3.0])))
        c = group_compose(g2, g1)
        assert isinstance(c.fiber, GridSampled)
        np.testing.assert_allclose(c.fiber([0.0]), g2.fiber([0.5]) @ g1.fiber([0.0]), atol=1e-12)

    @given(st.integers(0, 1000))
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        g = [Generator(rng.random(1), random_fourier(rng, kmax=1)) for _ in range(3)]
        lhs = group_compose(group_compose(g[2], g[1]), g[0])
        rhs = group_compose(g[2], group_compose(g[1], g[0]))
        gap = abs(lhs.theta[0] - rhs.theta[0])
        assert min(gap, 1 - gap) < 1e-12
        for t in np.linspace(0, 1, 8, endpoint=False):
            a, b = lhs.fiber([t]), rhs.fiber([t])
            assert np.linalg.norm(a - b) <= 1e-9 * max(1.0, np.linalg.norm(a))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            group_compose(Generator([0.1], Constant(np.eye(2))), Generator([0.1], Constant(np.eye(3))))


class TestSystem:
    def test_probability_vector(self):
        assert ProbabilityVector([0.25, 0.75]).p.sum() == 1
        with pytest.raises(ConfigError):
            ProbabilityVector([0.0, 1.0])
        with pytest.raises(ConfigError):
            ProbabilityVector([0.5, 0.6])

    def test_irrational_flag_required(self):
        with pytest.raises(ConfigError):
            CocycleSystem([Generator([0.5], Constant(np.eye(2)))])

    def test_mixed_dimensions(self):
        with pytest.raises(ConfigError):
            CocycleSystem([Generator([GOLDEN], Constant(np.eye(2)), True),
                           Generator([GOLDEN], Constant(np.eye(3)), True)])

    def test_json_roundtrip(self):
        sys = seeded_system(9)
        back = CocycleSystem.from_dict(sys.to_dict())
        for t in (0.1, 0.6):
            for a, b in zip(sys.generators, back.generators):
                np.testing.assert_allclose(a.fiber([t]), b.fiber([t]), atol=1e-14)
        assert back.irrational_flags == sys.irrational_flags

    def test_from_dict_errors(self):
        with pytest.raises(ConfigError):
            CocycleSystem.from_dict({"d": 2, "m": 1})
        with pytest.raises(ConfigError):
            CocycleSystem.from_dict({"d": 2, "m": 1, "generators": [
                {"theta": [0.3], "fiber": {"type": "spline"}}], "irrational_flags": [True]})

    def test_exterior_power_system(self):
        sys = seeded_system(10, d=3)
        ext = sys.exterior(2)
        assert ext.d == 3
        t = np.array([[0.3]])
        from qpcocycle.algebra import compound

        np.testing.assert_allclose(ext.generators[0].fiber.batch(t)[0],
                                   compound(sys.generators[0].fiber.batch(t)[0], 2), atol=1e-12)


class TestFixtures:
    def test_diagonal_closed_form(self):
        f = fixture("diagonal-const", a=(2, 3), b=(0.5, 1 / 3), p=(0.5, 0.5))
        v = 0.5 * (math.log(2) + math.log(3))
        np.testing.assert_allclose(f.exact_spectrum(), [v, -v])
        assert v == pytest.approx(0.8959, abs=1e-4)

    def test_diagonal_trivial(self):
        f = fixture("diagonal-const", a=(1, 1), b=(1, 1))
        np.testing.assert_allclose(f.exact_spectrum(), [0, 0])

    def test_spectrum_order_by_value(self):
        f = fixture("diagonal-const", a=(0.5, 0.5), b=(2, 2))
        np.testing.assert_allclose(f.exact_spectrum(), [math.log(2), -math.log(2)])

    def test_triangular_section(self):
        from qpcocycle.reduction import check_invariant

        f = fixture("triangular-const")
        assert check_invariant(f.system, f.section) <= 1e-12

    def test_unknown(self):
        with pytest.raises(ConfigError):
            fixture("no-such-system")

    @pytest.mark.parametrize("name", ["identity", "diagonal-const", "triangular-const", "triangular-fourier",
                                      "rotation-band", "schrodinger-like", "irreducible-2d"])
    def test_catalog_builds(self, name):
        f = fixture(name)
        assert f.system.N == len(f.p)
        assert any(f.system.irrational_flags)

    def test_irreducible_unit_determinant(self):
        f = fixture("irreducible-2d", s=1.3)
        t = np.linspace(0, 1, 17)[:, None]
        det = np.linalg.det(f.system.eval_all(t))
        np.testing.assert_allclose(det, 1.0, atol=1e-12)

    def test_module_level_shortcut(self):
        sys, p, sec = fixture("diagonal-const")
        assert sys.d == 2 and sec is not None and p is not None
