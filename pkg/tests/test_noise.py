import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from aclab.errors import ResolutionError, StructuralError
from aclab.fields import GridField, GridSpec
from aclab.noise import (
    MOLLIFIERS,
    check_resolvable,
    coarsen,
    discrete_profiles,
    mollify,
    mollify_values,
    sample_white_noise,
    sample_white_noise_batch,
    trial_seed,
)


def _rho_norm_sq(rho, d):
    """Continuum ``int rho^2`` of the unit-mass mollifier by direct quadrature."""
    a = integrate.quad(lambda t: float(rho.time_profile(t)) ** 2, -rho.t_half, rho.t_half)[0]
    a /= rho.time_mass() ** 2
    sphere = {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[d]
    b = sphere * integrate.quad(lambda r: float(rho.space_profile(r)) ** 2 * r ** (d - 1), 0, rho.r_max)[0]
    b /= rho.space_mass(d) ** 2
    return a * b


def test_determinism():
    s = GridSpec(2, 1.0, 8, 16)
    a = sample_white_noise(s, 7)
    b = sample_white_noise(s, 7)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_white_noise(s, 8).values)


def test_batch_matches_single():
    s = GridSpec(1, 1.0, 8, 16)
    seeds = [trial_seed(3, i) for i in range(5)]
    batch = sample_white_noise_batch(s, seeds)
    for i, sd in enumerate(seeds):
        assert np.array_equal(batch[i], sample_white_noise(s, sd).values)


def test_sample_mean_clt_bound():
    s = GridSpec(2, 1.0, 64, 64)
    xi = sample_white_noise(s, 11)
    std = 1 / math.sqrt(s.cell)
    assert abs(xi.values.mean()) < 4 * std / math.sqrt(xi.values.size)
    assert xi.values.std() == pytest.approx(std, rel=0.01)


def test_isometry():
    s = GridSpec(1, 1.0, 16, 16)
    f = GridField.from_function(s, lambda t, x: np.exp(-((t - 0.5) ** 2 + (x - 0.5) ** 2) * 10))
    seeds = [trial_seed(5, i) for i in range(1000)]
    xi = sample_white_noise_batch(s, seeds)
    pair = s.cell * np.sum(xi * f.values, axis=(1, 2))
    assert pair.var(ddof=1) == pytest.approx(f.l2_norm_sq(), rel=0.1)


def test_streams_uncorrelated():
    s = GridSpec(1, 1.0, 32, 32)
    xi = sample_white_noise_batch(s, [trial_seed(9, i) for i in range(4)])
    n = xi[0].size
    for i in range(4):
        for j in range(i + 1, 4):
            r = np.corrcoef(xi[i].ravel(), xi[j].ravel())[0, 1]
            assert abs(r) < 4 / math.sqrt(n)


def test_trial_seed_is_stateless():
    assert trial_seed(1, 5) == trial_seed(1, 5)
    assert len({trial_seed(1, i) for i in range(1000)}) == 1000
    assert trial_seed(1, 0) != trial_seed(2, 0)


class TestMollify:
    def test_constant_preserved(self):
        s = GridSpec(2, 0.25, 32, 32)
        out = mollify(GridField.constant(s, 2.5), 0.25)
        assert np.allclose(out.values, 2.5, atol=1e-12)

    @pytest.mark.parametrize("kind", ["bump", "flat"])
    def test_discrete_mass_is_one(self, kind):
        s = GridSpec(3, 0.25, 64, 16)
        a, b = discrete_profiles(s, 0.25, kind)
        assert abs(s.dt * a.sum() - 1) < 1e-12
        assert abs(s.dx**3 * b.sum() - 1) < 1e-12
        assert MOLLIFIERS[kind].t_half ** 2 + MOLLIFIERS[kind].r_max ** 2 <= 1

    def test_linear(self, rng):
        s = GridSpec(1, 0.25, 64, 32)
        f, g = rng.standard_normal(s.shape), rng.standard_normal(s.shape)
        lhs = mollify_values(f + g, s, 0.25)
        rhs = mollify_values(f, s, 0.25) + mollify_values(g, s, 0.25)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_delta_zero_is_identity(self, rng):
        s = GridSpec(1, 0.25, 8, 8)
        f = rng.standard_normal(s.shape)
        assert np.array_equal(mollify_values(f, s, 0.0), f)

    def test_variance_matches_norm_of_rho(self):
        d, delta = 1, 0.25
        s = GridSpec(d, 0.25, 64, 64)
        xi = sample_white_noise_batch(s, [trial_seed(21, i) for i in range(1000)])
        v = mollify_values(xi, s, delta)
        var = float(np.mean(v[:, 0, :] ** 2))
        expect = delta ** -(d + 2) * _rho_norm_sq(MOLLIFIERS["bump"], d)
        assert var == pytest.approx(expect, rel=0.15)

    def test_variance_ratio_under_halving(self):
        d = 1
        s = GridSpec(d, 0.25, 128, 64)
        xi = sample_white_noise_batch(s, [trial_seed(22, i) for i in range(1000)])
        v1 = np.mean(mollify_values(xi, s, 0.25)[:, 0] ** 2)
        v2 = np.mean(mollify_values(xi, s, 0.125)[:, 0] ** 2)
        assert v2 / v1 == pytest.approx(2 ** (d + 2), rel=0.2)

    def test_unresolvable(self):
        s = GridSpec(2, 1.0, 64, 16)
        with pytest.raises(ResolutionError) as err:
            check_resolvable(s, 0.0625)
        assert err.value.required_n_x == 32
        assert err.value.required_n_t == 512


@given(st.integers(0, 2**63 - 1), st.integers(0, 10**6))
def test_trial_seed_range(master, i):
    s = trial_seed(master, i)
    assert 0 <= s < 2**64


class TestCoarsen:
    def test_block_mean_is_white_noise_on_coarse_grid(self):
        fine, coarse = GridSpec(2, 0.25, 64, 32), GridSpec(2, 0.25, 16, 8)
        xi = sample_white_noise(fine, 30)
        c = coarsen(xi, coarse)
        assert c.values.shape == coarse.shape
        assert c.values.std() == pytest.approx(1 / math.sqrt(coarse.cell), rel=0.05)

    def test_preserves_pairing_with_coarse_functions(self, rng):
        fine, coarse = GridSpec(1, 0.5, 32, 16), GridSpec(1, 0.5, 8, 4)
        xi = sample_white_noise(fine, 31)
        g = rng.standard_normal(coarse.shape)
        g_fine = np.repeat(np.repeat(g, 4, axis=0), 4, axis=1)
        lhs = coarse.cell * np.sum(coarsen(xi, coarse).values * g)
        rhs = fine.cell * np.sum(xi.values * g_fine)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_identity_and_mismatch(self):
        s = GridSpec(1, 0.5, 8, 8)
        xi = sample_white_noise(s, 1)
        assert np.allclose(coarsen(xi, s).values, xi.values)
        with pytest.raises(StructuralError):
            coarsen(xi, GridSpec(1, 0.5, 3, 8))
        with pytest.raises(StructuralError):
            coarsen(xi, GridSpec(1, 0.25, 8, 8))
