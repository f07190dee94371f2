"""Renormalization constants of the mollified equation.

``c1`` is the stationary variance of the linear solution ``<1> = P * xi_delta``
and ``c2`` is the logarithmically divergent three-dimensional constant. Both are
computed on the same lattice, with the same heat integrator and discrete
mollifier as the simulation, so that Wick recentring is exact on the grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from aclab.errors import ConfigurationError, DomainError, UnsupportedDimensionError
from aclab.fields import GridField, GridSpec, heat_factors, wavenumbers_sq
from aclab.noise import (
    Mollifier,
    _get_mollifier,
    check_resolvable,
    discrete_profiles,
    mollifier_multipliers,
    mollify_values,
    sample_white_noise_batch,
    trial_seed,
)

__all__ = [
    "RenormConstants",
    "c1",
    "c2",
    "c_lambda",
    "heat_mollifier_norm",
    "renorm_constants",
    "c1_monte_carlo",
    "stationary_heat_kernel",
]

# The c2 quadrature holds a few full space-time arrays; beyond this many nodes
# it would not fit in a desk machine's memory.
C2_MAX_NODES = 2**26


@dataclass(frozen=True)
class RenormConstants:
    d: int
    delta: float
    mollifier: str
    c1: float
    c2: float | None
    provenance: str = "fourier-quadrature"


def _rfft_weights(spec: GridSpec) -> np.ndarray:
    """Multiplicity of each half-spectrum entry in the full spectrum."""
    n = spec.n_x
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return np.broadcast_to(w, (n,) * (spec.d - 1) + (n // 2 + 1,))


def _time_autocorrelation(spec: GridSpec, delta: float, rho: Mollifier):
    """Lags and values of ``A(r) = sum_i a(i) a(i + r)`` on the support of ``a``."""
    a, _ = discrete_profiles(spec, delta, rho)
    n = spec.n_t
    nz = np.nonzero(a)[0]
    offs = np.where(nz <= n // 2, nz, nz - n)
    lo, hi = offs.min(), offs.max()
    seg = np.zeros(hi - lo + 1)
    seg[offs - lo] = a[nz]
    ac = np.correlate(seg, seg, mode="full")
    lags = np.arange(-(len(seg) - 1), len(seg))
    return lags, ac


def c1(d: int, delta: float, rho=None, spec: GridSpec | None = None) -> float:
    """Lattice variance of the stationary ``<1>`` at any node.

    Per spatial mode ``k`` the stationary solution is ``v_i = sum_m g_m f_{i-1-m}``
    with ``g_m = Phi E^m / (1 - E^n)``; pairing this with the lag correlation of
    the mollified noise gives a closed form whose cost does not grow with
    ``n_t``. The zero spatial mode is excluded, as in the model.
    """
    rho = _get_mollifier(rho)
    if spec is None:
        raise DomainError("c1 needs the grid it will be used on")
    if spec.d != d:
        raise DomainError(f"grid dimension {spec.d} does not match d={d}")
    check_resolvable(spec, delta, rho)
    return _c1(spec, float(delta), rho)


@lru_cache(maxsize=128)
def _c1(spec: GridSpec, delta: float, rho: Mollifier) -> float:
    _, b_hat = mollifier_multipliers(spec, delta, rho)
    lags, ac = _time_autocorrelation(spec, delta, rho)
    _, Phi = heat_factors(spec)
    a = 4.0 * np.pi**2 * wavenumbers_sq(spec)
    mask = a > 0
    a = a[mask]
    Phi = Phi[mask]
    weight = (_rfft_weights(spec)[mask]) * np.abs(b_hat[mask]) ** 2
    dt, n = spec.dt, spec.n_t
    one_m_E2 = -np.expm1(-2.0 * a * dt)
    one_m_En = -np.expm1(-a * spec.T)
    acc = np.zeros_like(a)
    for r, A in zip(np.abs(lags), ac):
        if A == 0.0:
            continue
        r = int(r) % n
        s1 = np.exp(-a * r * dt) * -np.expm1(-2.0 * a * (n - r) * dt)
        s2 = np.exp(-a * (n - r) * dt) * -np.expm1(-2.0 * a * r * dt)
        acc += A * (s1 + s2)
    terms = weight * Phi**2 / one_m_En**2 / one_m_E2 * acc
    return float(dt * np.sum(terms))


def _heat_multiplier(spec: GridSpec) -> np.ndarray:
    """``cell * DFT`` of the stationary heat response on the full space-time rFFT layout."""
    E, Phi = heat_factors(spec)
    n = spec.n_t
    omega = np.exp(2j * np.pi * np.arange(n) / n).reshape((n,) + (1,) * spec.d)
    zero = wavenumbers_sq(spec) == 0
    H = Phi / np.where(zero, 1.0, omega - E)
    H[:, zero] = 0.0
    return H


def stationary_heat_kernel(spec: GridSpec) -> GridField:
    """Kernel ``G`` with ``heat_convolve(f, stationary=True) == periodic_convolve(G, f)``."""
    H = _heat_multiplier(spec)
    axes = tuple(range(spec.d + 1))
    return GridField(spec, np.fft.irfftn(H / spec.cell, s=spec.shape, axes=axes))


def c2(delta: float, rho=None, spec: GridSpec | None = None) -> float:
    """Second constant ``2 int G Q^2`` with ``Q`` the autocorrelation of ``P * rho_delta``.

    ``Q`` is the covariance of the stationary ``<1>``, so ``Q(0) = c1``, and the
    result is exactly the mean of ``<20> * <2>`` at a node of the lattice model.
    """
    rho = _get_mollifier(rho)
    if spec is None:
        raise DomainError("c2 needs the grid it will be used on")
    if spec.d != 3:
        raise UnsupportedDimensionError("the second renormalization constant exists only for d = 3")
    check_resolvable(spec, delta, rho)
    nodes = spec.n_t * spec.n_x**3
    if nodes > C2_MAX_NODES:
        raise ConfigurationError(f"c2 quadrature on {nodes} nodes exceeds the limit of {C2_MAX_NODES}")
    return _c2(spec, float(delta), rho)


@lru_cache(maxsize=32)
def _c2(spec: GridSpec, delta: float, rho: Mollifier) -> float:
    a_hat, b_hat = mollifier_multipliers(spec, delta, rho)
    axes = tuple(range(spec.d + 1))
    H = _heat_multiplier(spec)
    PH2 = np.abs(H * a_hat.reshape((-1,) + (1,) * spec.d) * b_hat) ** 2
    H /= spec.cell
    G = np.fft.irfftn(H, s=spec.shape, axes=axes)
    del H
    PH2 /= spec.cell
    Q = np.fft.irfftn(PH2, s=spec.shape, axes=axes)
    del PH2
    Q *= Q
    return float(2.0 * spec.cell * np.vdot(G, Q))


def _radial_fourier(rho: Mollifier, kappa: np.ndarray, d: int, nodes: int = 400) -> np.ndarray:
    """Fourier transform of the unit-mass radial profile at frequencies ``kappa``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * rho.r_max * (x + 1.0)
    w = 0.5 * rho.r_max * w
    b = rho.space_profile(r) / rho.space_mass(d)
    kr = 2.0 * np.pi * np.outer(kappa, r)
    if d == 3:
        kern = 4.0 * np.pi * r**2 * np.sinc(2.0 * np.outer(kappa, r))
    elif d == 2:
        kern = 2.0 * np.pi * r * special.j0(kr)
    else:
        kern = 2.0 * np.cos(kr)
    return kern @ (w * b)


def _time_autocorrelation_continuum(rho: Mollifier, nodes: int = 400):
    """Nodes ``s`` in ``[0, 2 t_half]`` with weights and ``A(s) = int a(t) a(t+s) dt``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    L = 2.0 * rho.t_half
    s = 0.5 * L * (x + 1.0)
    ws = 0.5 * L * w
    t = rho.t_half * x
    wt = rho.t_half * w
    mass = rho.time_mass()
    a_t = rho.time_profile(t) / mass
    A = (rho.time_profile(t[None, :] + s[:, None]) / mass) @ (wt * a_t)
    return s, ws, A


@lru_cache(maxsize=16)
def heat_mollifier_norm(rho: Mollifier | None = None, d: int = 3) -> float:
    """Continuum ``int_{R x R^d} (P * rho)^2`` for the unscaled mollifier.

    Computed in Fourier variables: for a spatial frequency with heat rate
    ``lam = 4 pi^2 |xi|^2`` the time integral equals
    ``(1/(2 lam)) int A(s) exp(-lam |s|) ds`` with ``A`` the time
    autocorrelation of ``rho``. Finite only for ``d = 3``.
    """
    rho = _get_mollifier(rho)
    if d != 3:
        raise UnsupportedDimensionError("the heat-mollifier norm is finite only for d = 3")
    s, ws, A = _time_autocorrelation_continuum(rho)
    # Substituting kappa = u/(1-u) maps [0, inf) to [0, 1).
    x, w = np.polynomial.legendre.leggauss(600)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    kappa = u / (1.0 - u)
    jac = 1.0 / (1.0 - u) ** 2
    lam = 4.0 * np.pi**2 * kappa**2
    rho_hat = _radial_fourier(rho, kappa, d)
    time_int = 2.0 * (np.exp(-np.outer(lam, s)) @ (ws * A))
    integrand = rho_hat**2 * time_int / (2.0 * lam) * 4.0 * np.pi * kappa**2
    return float(np.sum(wu * jac * integrand))


def c_lambda(C: float, lam: float, d: int, rho=None) -> float:
    """Shifted linear coefficient ``C - 3 lam^2 k`` for a diagonal schedule.

    ``k`` is ``int (P * rho)^2`` in three dimensions and ``1/(4 pi)`` in two,
    where it does not depend on the mollifier. In one dimension no shift
    occurs; ``C`` is returned with a warning.
    """
    if lam < 0:
        raise DomainError(f"lambda must be non-negative, got {lam!r}")
    if d == 1:
        warnings.warn("no renormalization shift in d=1; returning C unchanged", stacklevel=2)
        return float(C)
    if d == 2:
        k = 1.0 / (4.0 * np.pi)
    elif d == 3:
        k = heat_mollifier_norm(_get_mollifier(rho), 3)
    else:
        raise UnsupportedDimensionError(f"unsupported dimension {d!r}")
    return float(C) - 3.0 * lam**2 * k


def renorm_constants(d: int, delta: float, rho=None, spec: GridSpec | None = None) -> RenormConstants:
    rho = _get_mollifier(rho)
    v1 = c1(d, delta, rho, spec)
    v2 = c2(delta, rho, spec) if d == 3 else None
    return RenormConstants(d=d, delta=float(delta), mollifier=rho.id, c1=v1, c2=v2)


def c1_monte_carlo(d: int, delta: float, rho=None, spec: GridSpec | None = None,
                   n_samples: int = 1000, seed: int = 0, batch: int = 256):
    """Sample mean and standard error of ``<1>(z0)^2`` over independent seeds.

    One node per realization is used so that samples are independent.
    """
    rho = _get_mollifier(rho)
    if spec is None or spec.d != d:
        raise DomainError("c1_monte_carlo needs a grid of matching dimension")
    check_resolvable(spec, delta, rho)
    H = _heat_multiplier(spec)
    axes = tuple(range(1, spec.d + 2))
    out = np.empty(n_samples)
    for start in range(0, n_samples, batch):
        idx = range(start, min(start + batch, n_samples))
        xi = sample_white_noise_batch(spec, [trial_seed(seed, i) for i in idx])
        xd = mollify_values(xi, spec, delta, rho)
        V = np.fft.irfftn(H * np.fft.rfftn(xd, axes=axes), s=spec.shape, axes=axes)
        out[start:start + len(idx)] = V[(slice(None),) + (0,) * (spec.d + 1)] ** 2
    return float(out.mean()), float(out.std(ddof=1) / np.sqrt(n_samples))
