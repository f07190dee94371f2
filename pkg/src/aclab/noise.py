"""Seeded space-time white noise and parabolic mollification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from aclab.errors import ResolutionError, StructuralError
from aclab.fields import GridField, GridSpec

__all__ = [
    "NoiseRealization",
    "coarsen",
    "Mollifier",
    "MOLLIFIERS",
    "sample_white_noise",
    "sample_white_noise_batch",
    "trial_seed",
    "check_resolvable",
    "required_resolution",
    "mollifier_multipliers",
    "mollify",
    "mollify_values",
]

_SEED_MASK = (1 << 64) - 1


def _generator(seed: int, spec: GridSpec | None = None) -> np.random.Generator:
    entropy = [int(seed) & _SEED_MASK]
    if spec is not None:
        # Bind the stream to the grid so that one seed never silently feeds two
        # differently shaped experiments with correlated prefixes.
        entropy += [spec.d, spec.n_t, spec.n_x]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def trial_seed(master_seed: int, index: int) -> int:
    """64-bit seed of trial ``index`` derived from ``master_seed``.

    Derivation is stateless, so any trial can be regenerated in isolation and
    parallel workers never share generator state.
    """
    ss = np.random.SeedSequence(int(master_seed) & _SEED_MASK, spawn_key=(int(index),))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """White noise on a grid: i.i.d. centred Gaussians of variance ``1/(dt dx^d)``."""

    spec: GridSpec
    seed: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.spec.shape:
            raise StructuralError("noise values do not match the grid")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def as_field(self) -> GridField:
        return GridField(self.spec, self.values)


def sample_white_noise(spec: GridSpec, seed: int) -> NoiseRealization:
    z = _generator(seed, spec).standard_normal(spec.shape)
    return NoiseRealization(spec, int(seed), z / math.sqrt(spec.cell))


def sample_white_noise_batch(spec: GridSpec, seeds) -> np.ndarray:
    """Stack of white-noise arrays, one per seed; identical to sampling each seed alone."""
    seeds = list(seeds)
    out = np.empty((len(seeds),) + spec.shape)
    for i, s in enumerate(seeds):
        out[i] = _generator(s, spec).standard_normal(spec.shape)
    out /= math.sqrt(spec.cell)
    return out


def coarsen(xi: NoiseRealization, spec: GridSpec) -> NoiseRealization:
    """Restrict white noise to a coarser grid by averaging over blocks of cells.

    Node values are cell averages of the continuum noise, so block means are
    again white noise on ``spec``. Realizations on nested grids built this way
    are coupled, which lets dyadic comparisons across resolutions share one
    sample.
    """
    fine = xi.spec
    if spec.d != fine.d or abs(spec.T - fine.T) > 1e-12 * fine.T:
        raise StructuralError("coarse grid must share d and T with the fine grid")
    if fine.n_t % spec.n_t or fine.n_x % spec.n_x:
        raise StructuralError("coarse grid does not nest in the fine grid")
    ft, fx = fine.n_t // spec.n_t, fine.n_x // spec.n_x
    shape = (spec.n_t, ft) + sum(((spec.n_x, fx),) * spec.d, ())
    v = np.asarray(xi.values).reshape(shape).mean(axis=tuple(range(1, 2 * spec.d + 2, 2)))
    return NoiseRealization(spec, xi.seed, v)


def _psi(r: np.ndarray, sharpness: float, power: int) -> np.ndarray:
    r = np.abs(np.asarray(r, dtype=np.float64))
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-sharpness / (1.0 - r[inside] ** power))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Separable parabolic bump ``rho(t, x) = a(t) b(|x|)``.

    ``a`` is supported on ``|t| < t_half`` and ``b`` on ``|x| < r_max``, with
    ``t_half**2 + r_max**2 <= 1`` so the support sits in the unit ball. The
    continuum profile has unit integral; grid samples are renormalized so the
    discrete sum is exactly one as well.
    """

    kind: str = "bump"
    t_half: float = 0.36
    r_max: float = 0.8
    sharpness: float = 1.0
    power: int = 2

    def __post_init__(self):
        if self.t_half <= 0 or self.r_max <= 0 or self.t_half**2 + self.r_max**2 > 1.0 + 1e-12:
            raise StructuralError("mollifier support must lie in the unit ball")

    @property
    def id(self) -> str:
        return self.kind

    def time_profile(self, t) -> np.ndarray:
        """Unnormalized time factor."""
        return _psi(np.asarray(t) / self.t_half, self.sharpness, self.power)

    def space_profile(self, r) -> np.ndarray:
        """Unnormalized radial space factor."""
        return _psi(np.asarray(r) / self.r_max, self.sharpness, self.power)

    def time_mass(self) -> float:
        return _mass(self, "t", 1)

    def space_mass(self, d: int) -> float:
        return _mass(self, "x", d)


@lru_cache(maxsize=32)
def _mass(rho: Mollifier, which: str, d: int) -> float:
    if which == "t":
        f = lambda t: float(rho.time_profile(t))
        return 2.0 * integrate.quad(f, 0.0, rho.t_half, epsabs=1e-15, epsrel=1e-13)[0]
    sphere = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}[d]
    f = lambda r: float(rho.space_profile(r)) * r ** (d - 1)
    return sphere * integrate.quad(f, 0.0, rho.r_max, epsabs=1e-15, epsrel=1e-13)[0]


MOLLIFIERS = {
    "bump": Mollifier(),
    # Flatter-topped profile with a different aspect ratio, used to check that
    # universal quantities do not depend on the mollifier.
    "flat": Mollifier(kind="flat", t_half=0.6, r_max=0.6, sharpness=0.5, power=4),
}


def _get_mollifier(rho) -> Mollifier:
    if rho is None:
        return MOLLIFIERS["bump"]
    if isinstance(rho, str):
        try:
            return MOLLIFIERS[rho]
        except KeyError:
            raise StructuralError(f"unknown mollifier {rho!r}") from None
    return rho


def required_resolution(spec: GridSpec, delta: float) -> tuple:
    """Smallest ``(n_x, n_t)`` at which ``delta`` is resolvable for this horizon."""
    n_x = 2
    while 1.0 / n_x > delta / 2.0 * (1 + 1e-12):
        n_x *= 2
    n_t = int(math.ceil(2.0 * spec.T / delta**2 * (1 - 1e-12)))
    return n_x, n_t


def check_resolvable(spec: GridSpec, delta: float, rho=None) -> None:
    """Raise :class:`ResolutionError` unless ``delta >= 2 dx`` and ``delta^2 >= 2 dt``."""
    rho = _get_mollifier(rho)
    if delta == 0:
        return  # unmollified white noise
    if not (delta > 0):
        raise ResolutionError(f"correlation length must be non-negative, got {delta!r}")
    tol = 1e-12
    ok_x = delta >= 2.0 * spec.dx * (1 - tol)
    ok_t = delta**2 >= 2.0 * spec.dt * (1 - tol)
    if not (ok_x and ok_t):
        n_x, n_t = required_resolution(spec, delta)
        raise ResolutionError(
            f"delta={delta:.6g} is not resolvable on n_x={spec.n_x}, n_t={spec.n_t}; "
            f"need n_x >= {n_x} and n_t >= {n_t}",
            required_n_x=max(n_x, spec.n_x),
            required_n_t=max(n_t, spec.n_t),
        )
    if 2.0 * rho.t_half * delta**2 >= spec.T:
        raise ResolutionError(
            f"mollifier time support {2 * rho.t_half * delta**2:.3g} exceeds the horizon T={spec.T}"
        )


def _circular_offsets(n: int, step: float) -> np.ndarray:
    idx = np.arange(n)
    idx = np.where(idx <= n // 2, idx, idx - n)
    return idx * step


@lru_cache(maxsize=64)
def _discrete_profiles(spec: GridSpec, delta: float, rho: Mollifier):
    if delta == 0:
        a = np.zeros(spec.n_t)
        a[0] = 1.0 / spec.dt
        b = np.zeros(spec.space_shape)
        b[(0,) * spec.d] = 1.0 / spec.dx**spec.d
        a.setflags(write=False)
        b.setflags(write=False)
        return a, b
    t = _circular_offsets(spec.n_t, spec.dt) / delta**2
    a = rho.time_profile(t)
    a = a / (spec.dt * a.sum())
    offs = _circular_offsets(spec.n_x, spec.dx) / delta
    r2 = np.zeros(spec.space_shape)
    for axis in range(spec.d):
        shape = [1] * spec.d
        shape[axis] = spec.n_x
        r2 = r2 + offs.reshape(shape) ** 2
    b = rho.space_profile(np.sqrt(r2))
    b = b / (spec.dx**spec.d * b.sum())
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


def discrete_profiles(spec: GridSpec, delta: float, rho=None):
    """Grid samples ``(a, b)`` of ``rho_delta`` on circular offsets, each of unit discrete mass."""
    rho = _get_mollifier(rho)
    check_resolvable(spec, delta, rho)
    return _discrete_profiles(spec, float(delta), rho)


@lru_cache(maxsize=64)
def _multipliers(spec: GridSpec, delta: float, rho: Mollifier):
    a, b = _discrete_profiles(spec, delta, rho)
    a_hat = spec.dt * np.fft.fft(a)
    b_hat = (spec.dx**spec.d) * np.fft.rfftn(b)
    a_hat.setflags(write=False)
    b_hat.setflags(write=False)
    return a_hat, b_hat


def mollifier_multipliers(spec: GridSpec, delta: float, rho=None):
    """Fourier multipliers ``(a_hat, b_hat)`` of ``rho_delta`` (time FFT, spatial rFFT)."""
    rho = _get_mollifier(rho)
    check_resolvable(spec, delta, rho)
    return _multipliers(spec, float(delta), rho)


def mollify_values(values: np.ndarray, spec: GridSpec, delta: float, rho=None) -> np.ndarray:
    """Mollify an array whose trailing axes are the grid; leading axes are a batch."""
    if delta == 0:
        return np.array(values, dtype=np.float64, copy=True)
    a_hat, b_hat = mollifier_multipliers(spec, delta, rho)
    d = spec.d
    t_axis = -(d + 1)
    s_axes = tuple(range(-d, 0))
    F = np.fft.rfftn(values, axes=s_axes)
    F = np.fft.fft(F, axis=t_axis)
    F *= a_hat.reshape((-1,) + (1,) * d) * b_hat
    F = np.fft.ifft(F, axis=t_axis)
    return np.fft.irfftn(F, s=spec.space_shape, axes=s_axes)


def mollify(xi, delta: float, rho=None) -> GridField:
    """``xi_delta = rho_delta * xi`` by circular space-time convolution.

    ``delta = 0`` returns the input unchanged (unmollified white noise).
    """
    if isinstance(xi, NoiseRealization):
        spec, values = xi.spec, xi.values
    elif isinstance(xi, GridField):
        spec, values = xi.spec, xi.values
    else:
        raise StructuralError("mollify expects a noise realization or a grid field")
    return GridField(spec, mollify_values(values, spec, delta, rho))
