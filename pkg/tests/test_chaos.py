import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aclab.algebra import chaos_order, tree
from aclab.chaos import (
    build_minimal_model,
    cameron_martin_shift_check,
    chaos_sample_stats,
    hermite,
    model_pair_3d,
    second_order_field,
    stationary_pair_3d,
    wick_power,
)
from aclab.errors import StructuralError, UnsupportedDimensionError
from aclab.fields import GridField, GridSpec, TestFunction, heat_convolve, test_pair
from aclab.noise import NoiseRealization, mollify, sample_white_noise, sample_white_noise_batch, trial_seed
from aclab.renorm import renorm_constants


class TestHermite:
    def test_listed_values(self):
        assert hermite(2, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert hermite(3, 2.0) == pytest.approx(2 / math.sqrt(6), rel=1e-14)
        x = np.linspace(-3, 3, 7)
        assert np.array_equal(hermite(0, x), np.ones_like(x))
        assert hermite(2, x) == pytest.approx((x**2 - 1) / math.sqrt(2))

    def test_orthonormal_under_gaussian(self):
        x, w = np.polynomial.hermite_e.hermegauss(64)
        w = w / math.sqrt(2 * math.pi)
        for j in range(7):
            for k in range(7):
                val = np.sum(w * hermite(j, x) * hermite(k, x))
                assert abs(val - (j == k)) < 1e-10

    def test_generating_function(self):
        lam, x = 0.3, 0.7
        series = sum(lam**k / math.sqrt(math.factorial(k)) * hermite(k, x) for k in range(30))
        assert series == pytest.approx(math.exp(lam * x - lam**2 / 2), rel=1e-14)

    def test_negative_order(self):
        with pytest.raises(StructuralError):
            hermite(-1, 0.0)


class TestWickPower:
    def test_constants(self):
        s = GridSpec(1, 1.0, 2, 4)
        f = GridField.constant(s, 1.5)
        assert np.allclose(wick_power(f, 2, 0.4).values, 1.5**2 - 0.4)
        assert np.allclose(wick_power(f, 3, 0.4).values, 1.5**3 - 3 * 0.4 * 1.5)
        with pytest.raises(UnsupportedDimensionError):
            wick_power(f, 4, 0.4)

    @given(st.floats(-10, 10), st.floats(0, 5))
    def test_telescoping(self, a, C):
        s = GridSpec(1, 1.0, 1, 2)
        f = GridField.constant(s, a)
        lhs = wick_power(f, 3, C).values
        rhs = f.values * wick_power(f, 2, C).values - 2 * C * f.values
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)

    def test_wick_square_mean_zero(self):
        spec = GridSpec(2, 0.25, 32, 16)
        k = renorm_constants(2, 0.25, None, spec)
        means = []
        for i in range(200):
            m = build_minimal_model(sample_white_noise(spec, trial_seed(31, i)), 0.25, 2, True, constants=k)
            means.append(m["<2>"].mean())
        means = np.array(means)
        assert abs(means.mean()) < 3 * means.std(ddof=1) / math.sqrt(len(means))


class TestMinimalModel:
    def test_zero_noise(self):
        spec = GridSpec(3, 0.25, 16, 8)
        m = build_minimal_model(GridField.zeros(spec), 0.25, 3, renormalised=False)
        for name in ("Xi", "<1>", "<2>", "<3>", "<20>", "<30>"):
            assert m[name].sup() == 0.0
        z = (0.125, 0.5, 0.5, 0.5)
        phi = TestFunction(z, 0.5)
        for tau in ("<22>", "<31>", "<32>"):
            assert model_pair_3d(m, tau, z, phi) == 0.0

    def test_scaling_of_cube(self):
        spec = GridSpec(2, 0.25, 32, 16)
        xi = sample_white_noise(spec, 3)
        a = build_minimal_model(xi, 0.25, 2, False, eps=4.0)["<3>"].values
        b = build_minimal_model(xi, 0.25, 2, False, eps=1.0)["<3>"].values
        mask = np.abs(b) > 1e-8 * np.abs(b).max()
        assert np.max(np.abs(a[mask] / b[mask] / 8.0 - 1)) < 1e-10

    def test_canonical_lift_of_deterministic_input(self):
        spec = GridSpec(2, 0.25, 32, 16)
        h = GridField.from_function(spec, lambda t, x, y: np.sin(2 * np.pi * x) * np.cos(2 * np.pi * (y + t)))
        m = build_minimal_model(h, 0.25, 2, renormalised=False)
        ph = heat_convolve(mollify(h, 0.25), stationary=True)
        assert np.array_equal(m["<2>"].values, ph.values**2)

    def test_renormalised_subtracts_scaled_constant(self):
        spec = GridSpec(2, 0.25, 32, 16)
        xi = sample_white_noise(spec, 5)
        k = renorm_constants(2, 0.25, None, spec)
        raw = build_minimal_model(xi, 0.25, 2, False, eps=0.5)
        ren = build_minimal_model(xi, 0.25, 2, True, eps=0.5, constants=k)
        assert ren.c1 == pytest.approx(0.5 * k.c1)
        assert np.allclose(raw["<2>"].values - ren["<2>"].values, 0.5 * k.c1)

    def test_dimension_mismatch(self):
        spec = GridSpec(2, 0.25, 32, 16)
        with pytest.raises(StructuralError):
            build_minimal_model(sample_white_noise(spec, 1), 0.25, 3, False)
        m = build_minimal_model(sample_white_noise(spec, 1), 0.25, 2, False)
        with pytest.raises(UnsupportedDimensionError):
            m["<20>"]
        with pytest.raises(UnsupportedDimensionError):
            model_pair_3d(m, "<22>", (0.1, 0.5, 0.5), TestFunction((0.1, 0.5, 0.5), 0.25))


class TestSecondOrder:
    def test_base_point_subtraction_vanishes_at_base_point(self):
        spec = GridSpec(3, 0.25, 32, 16)
        m = build_minimal_model(sample_white_noise(spec, 8), 0.25, 3, False)
        z = (0.125, 0.5, 0.5, 0.5)
        f = second_order_field(m, "<31>", z)
        assert f.values[16, 8, 8, 8] == 0.0
        assert np.count_nonzero(f.values) > 0
        vals = [abs(model_pair_3d(m, "<31>", z, TestFunction(z, lam))) for lam in (0.5, 0.35, 0.25)]
        assert vals[0] > vals[1] > vals[2]


    @pytest.mark.parametrize("tau", ["<22>", "<31>", "<32>"])
    def test_stationary_average_matches_brute_force(self, tau):
        spec = GridSpec(3, 0.25, 16, 8)
        k = renorm_constants(3, 0.25, None, spec)
        m = build_minimal_model(sample_white_noise(spec, 4), 0.25, 3, True, constants=k)
        z = (0.125, 0.5, 0.5, 0.5)
        zi = np.array([8, 4, 4, 4])
        phi = TestFunction(z, 0.5)
        total = 0.0
        for y in np.ndindex(spec.shape):
            f = second_order_field(m, tau, (y[0] * spec.dt,) + tuple(c * spec.dx for c in y[1:]))
            moved = np.roll(f.values, tuple(zi - np.array(y)), axis=(0, 1, 2, 3))
            total += test_pair(GridField(spec, moved), phi)
        assert stationary_pair_3d(m, tau, 0.5) == pytest.approx(total / np.prod(spec.shape), rel=1e-9, abs=1e-15)

class TestCameronMartin:
    def test_zero_shift(self):
        spec = GridSpec(2, 0.125, 64, 32)
        phi = TestFunction((0.0625, 0.5, 0.5), 0.25)
        r = cameron_martin_shift_check(GridField.zeros(spec), 0.0625, 2, phi, 200, seed=1)
        assert r.canonical == 0.0
        assert abs(r.mean) < 3 * r.stderr

    def test_bump_shift(self):
        spec = GridSpec(2, 0.125, 64, 32)
        h = GridField.from_function(spec, lambda t, x, y: 20 * np.exp(-20 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)))
        phi = TestFunction((0.0625, 0.5, 0.5), 0.25)
        r = cameron_martin_shift_check(h, 2.0**-4, 2, phi, 1000, seed=2)
        assert abs(r.z_score) < 3
        r2 = cameron_martin_shift_check(2.0 * h, 2.0**-4, 2, phi, 2, seed=2)
        assert r2.canonical == pytest.approx(4 * r.canonical, rel=1e-12)


class TestChaosStats:
    def test_tail_shapes_follow_chaos_order(self):
        spec = GridSpec(2, 0.25, 32, 16)
        k = renorm_constants(2, 0.25, None, spec)
        s1, s2 = [], []
        for i in range(4000):
            xi = sample_white_noise_batch(spec, [trial_seed(1, i)])[0]
            m = build_minimal_model(NoiseRealization(spec, 0, xi), 0.25, 2, True, constants=k)
            s1.append(m["<1>"].values[0, 0, 0])
            s2.append(m["<2>"].values[0, 0, 0])
        a = chaos_sample_stats("<1>", s1)
        b = chaos_sample_stats(tree("<2>"), s2)
        assert a.chaos_order == 1 and b.chaos_order == chaos_order(tree("<2>")) == 2
        assert a.tail_shape == "quadratic" and b.tail_shape == "linear"
        assert a.tail_exponent > b.tail_exponent
        assert 1.2 < a.tail_exponent < 2.5 and 0.4 < b.tail_exponent < 1.3
        assert abs(b.mean) < 3 * b.mean_stderr
        assert b.variance == pytest.approx(2 * k.c1**2, rel=0.15)

    def test_pairing_is_linear_in_field(self):
        spec = GridSpec(2, 0.25, 32, 16)
        phi = TestFunction((0.125, 0.5, 0.5), 0.5)
        assert test_pair(GridField.zeros(spec), phi) == 0.0
