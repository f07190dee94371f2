"""Periodic space-time lattice, spectral heat flow and test-function pairings.

Space is the unit torus sampled at ``n_x`` points per axis; time runs over
``[0, T)`` sampled at ``n_t`` nodes ``t_i = i*dt``. Field values are stored as
arrays of shape ``(n_t, n_x, ..., n_x)`` with ``d`` spatial axes.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate

from aclab.errors import DomainError, StructuralError

__all__ = [
    "GridSpec",
    "GridField",
    "TestFunction",
    "wavenumbers_sq",
    "laplacian_symbol",
    "apply_laplacian",
    "heat_factors",
    "heat_convolve",
    "heat_semigroup",
    "periodic_convolve",
    "test_pair",
    "write_field",
    "read_field",
    "export_slice_csv",
]

MAGIC = b"SACGRID1"
_HEADER = struct.Struct("<8sIIIId")


@dataclass(frozen=True)
class GridSpec:
    d: int
    T: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise StructuralError(f"dimension must be 1, 2 or 3, got {self.d!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise StructuralError(f"time horizon must be positive, got {self.T!r}")
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise StructuralError(f"n_t must be a positive integer, got {self.n_t!r}")
        n = int(self.n_x)
        if n != self.n_x or n < 2 or n & (n - 1):
            raise StructuralError(f"n_x must be a power of two >= 2, got {self.n_x!r}")
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "n_x", n)
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> float:
        return 1.0 / self.n_x

    @property
    def cell(self) -> float:
        """Space-time volume ``dt * dx^d`` of one node."""
        return self.dt * self.dx**self.d

    @property
    def shape(self) -> tuple:
        return (self.n_t,) + (self.n_x,) * self.d

    @property
    def space_shape(self) -> tuple:
        return (self.n_x,) * self.d

    @property
    def spatial_axes(self) -> tuple:
        return tuple(range(-self.d, 0))

    def times(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt

    def coords(self) -> np.ndarray:
        return np.arange(self.n_x) * self.dx

    def with_(self, **changes) -> GridSpec:
        data = dict(d=self.d, T=self.T, n_t=self.n_t, n_x=self.n_x)
        data.update(changes)
        return GridSpec(**data)


@dataclass(frozen=True, eq=False)
class GridField:
    """Immutable real field on a :class:`GridSpec`."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape != self.spec.shape:
            raise StructuralError(f"values have shape {v.shape}, grid expects {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise StructuralError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: GridSpec) -> GridField:
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, c: float) -> GridField:
        return cls(spec, np.full(spec.shape, float(c)))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> GridField:
        """Sample ``fn(t, *x)`` on the nodes; arguments broadcast over the grid."""
        axes = [spec.times()] + [spec.coords()] * spec.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(spec, np.broadcast_to(fn(*mesh), spec.shape))

    def _check(self, other: GridField) -> None:
        if not isinstance(other, GridField) or other.spec != self.spec:
            raise StructuralError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.spec, self.values + other.values)
        return GridField(self.spec, self.values + float(other))

    def __sub__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.spec, self.values - other.values)
        return GridField(self.spec, self.values - float(other))

    def __mul__(self, other):
        if isinstance(other, GridField):
            self._check(other)
            return GridField(self.spec, self.values * other.values)
        return GridField(self.spec, self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.spec, -self.values)

    def inner(self, other: GridField) -> float:
        """Discrete L2 inner product ``dt dx^d sum f g``."""
        self._check(other)
        return float(self.spec.cell * np.sum(self.values * other.values))

    def l2_norm_sq(self) -> float:
        return float(self.spec.cell * np.sum(self.values**2))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.l2_norm_sq()))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))


@lru_cache(maxsize=64)
def _wavenumbers_sq(d: int, n_x: int) -> np.ndarray:
    k = np.fft.fftfreq(n_x, 1.0 / n_x)
    kr = np.fft.rfftfreq(n_x, 1.0 / n_x)
    grids = np.meshgrid(*([k] * (d - 1) + [kr]), indexing="ij")
    out = sum(g**2 for g in grids)
    out.setflags(write=False)
    return out


def wavenumbers_sq(spec: GridSpec) -> np.ndarray:
    """``|k|^2`` on the half-spectrum layout of ``numpy.fft.rfftn``."""
    return _wavenumbers_sq(spec.d, spec.n_x)


def laplacian_symbol(spec: GridSpec) -> np.ndarray:
    """Fourier symbol ``-4 pi^2 |k|^2`` of the periodic Laplacian."""
    return -4.0 * np.pi**2 * wavenumbers_sq(spec)


def _rfft(values: np.ndarray, d: int) -> np.ndarray:
    return np.fft.rfftn(values, axes=tuple(range(-d, 0)))


def _irfft(coeffs: np.ndarray, d: int, n_x: int) -> np.ndarray:
    return np.fft.irfftn(coeffs, s=(n_x,) * d, axes=tuple(range(-d, 0)))


def apply_laplacian(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Spectral Laplacian over the trailing ``d`` axes of ``values``."""
    return _irfft(laplacian_symbol(spec) * _rfft(values, spec.d), spec.d, spec.n_x)


def heat_factors(spec: GridSpec, dt: float | None = None):
    """Per-mode ``E = exp(-a dt)`` and ``Phi = (1 - E)/a`` with ``a = 4 pi^2 |k|^2``.

    ``Phi`` is the exact integral of the heat multiplier over one step, so
    ``v <- E v + Phi f`` integrates piecewise-constant forcing exactly.
    """
    h = spec.dt if dt is None else dt
    a = -laplacian_symbol(spec)
    E = np.exp(-a * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        Phi = np.where(a > 0, -np.expm1(-a * h) / np.where(a > 0, a, 1.0), h)
    return E, Phi


def heat_convolve(f: GridField, stationary: bool = False) -> GridField:
    """Duhamel integral ``v(t) = int_0^t e^{(t-s)Delta} f(s) ds`` on the nodes.

    The forcing is read as piecewise constant on ``[t_i, t_{i+1})`` and each
    step is integrated exactly per Fourier mode, so ``v(t_0) = 0``.

    With ``stationary=True`` the time axis is treated as periodic and the
    unique time-periodic solution with zero spatial mean is returned instead.
    This is the stationary object used by the minimal model.
    """
    spec = f.spec
    E, Phi = heat_factors(spec)
    F = _rfft(f.values, spec.d)
    if stationary:
        n = spec.n_t
        omega = np.exp(2j * np.pi * np.arange(n) / n).reshape((n,) + (1,) * spec.d)
        Fh = np.fft.fft(F, axis=0)
        denom = omega - E
        zero = wavenumbers_sq(spec) == 0
        denom = np.where(zero, 1.0, denom)
        V = np.fft.ifft(Phi * Fh / denom, axis=0)
        V[:, zero] = 0.0
    else:
        V = np.empty_like(F)
        v = np.zeros(F.shape[1:], dtype=F.dtype)
        for i in range(spec.n_t):
            V[i] = v
            v = E * v + Phi * F[i]
    return GridField(spec, _irfft(V, spec.d, spec.n_x))


def heat_semigroup(u0: np.ndarray, spec: GridSpec, t: float) -> np.ndarray:
    """Apply ``e^{t Delta}`` to a spatial slice."""
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape[-spec.d:] != spec.space_shape:
        raise StructuralError("slice does not match the spatial grid")
    mult = np.exp(laplacian_symbol(spec) * t)
    return _irfft(mult * _rfft(u0, spec.d), spec.d, spec.n_x)


def periodic_convolve(f: GridField, g: GridField) -> GridField:
    """Circular space-time convolution ``dt dx^d sum_w f(z - w) g(w)``."""
    f._check(g)
    spec = f.spec
    axes = tuple(range(spec.d + 1))
    out = np.fft.irfftn(np.fft.rfftn(f.values, axes=axes) * np.fft.rfftn(g.values, axes=axes), s=spec.shape, axes=axes)
    return GridField(spec, spec.cell * out)


def _bump(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=8)
def _profile_norm(d: int) -> float:
    # phi(t, x) = psi(2t) psi(2|x|) with psi(r) = exp(-1/(1-r^2)) on |r| < 1.
    psi = lambda r: float(np.exp(-1.0 / (1.0 - r * r))) if abs(r) < 1 else 0.0
    time_part = integrate.quad(psi, -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0] / 2.0
    radial = integrate.quad(lambda r: psi(r) * r ** (d - 1), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)[0]
    sphere = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}[d]
    space_part = sphere * radial / 2.0**d
    return time_part * space_part


@dataclass(frozen=True)
class TestFunction:
    """Rescaled bump ``phi_z^lam(t, x) = lam^-(d+2) phi((t - t0)/lam^2, (x - x0)/lam)``.

    The base profile is a product of smooth bumps with support
    ``|t| < 1/2``, ``|x| < 1/2`` and unit integral; so at scale ``lam`` the
    support is ``lam^2/2`` in time and radius ``lam/2`` in space.
    """

    __test__ = False  # keep pytest from collecting this class

    center: tuple
    scale: float

    def __post_init__(self):
        lam = float(self.scale)
        if not (0.0 < lam <= 1.0):
            raise DomainError(f"test-function scale must lie in (0, 1], got {self.scale!r}")
        object.__setattr__(self, "scale", lam)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def sample(self, spec: GridSpec) -> np.ndarray:
        if len(self.center) != spec.d + 1:
            raise StructuralError(f"center must have {spec.d + 1} coordinates")
        lam = self.scale
        t0, x0 = self.center[0], self.center[1:]
        half = lam**2 / 2.0
        tol = 1e-12 * max(1.0, spec.T)
        if t0 - half < -tol or t0 + half > spec.T + tol:
            raise DomainError("test-function time support leaves [0, T]")
        tt = (spec.times() - t0) / lam**2
        prof_t = _bump(2.0 * tt)
        r2 = np.zeros(spec.space_shape)
        for axis, c in enumerate(x0):
            diff = spec.coords() - c
            diff -= np.round(diff)  # periodic distance on the unit torus
            shape = [1] * spec.d
            shape[axis] = spec.n_x
            r2 = r2 + (diff.reshape(shape) / lam) ** 2
        prof_x = _bump(2.0 * np.sqrt(r2))
        scale = lam ** -(spec.d + 2) / _profile_norm(spec.d)
        return scale * prof_t.reshape((-1,) + (1,) * spec.d) * prof_x[None]


def test_pair(f: GridField, phi: TestFunction) -> float:
    """Quadrature of ``int f phi_z^lam`` on the nodes."""
    return float(f.spec.cell * np.sum(f.values * phi.sample(f.spec)))


test_pair.__test__ = False


def write_field(path, f: GridField) -> None:
    """Binary dump: 32-byte little-endian header then float64 values."""
    spec = f.spec
    header = _HEADER.pack(MAGIC, spec.d, spec.n_t, spec.n_x, 0, spec.T)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path) -> GridField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise StructuralError("file too short for a field header")
    magic, d, n_t, n_x, _, T = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise StructuralError("bad magic: not a field file")
    spec = GridSpec(d=d, T=T, n_t=n_t, n_x=n_x)
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if values.size != int(np.prod(spec.shape)):
        raise StructuralError("payload size does not match the header")
    return GridField(spec, values.reshape(spec.shape))


def export_slice_csv(path, f: GridField, time_index: int) -> None:
    """Write one time slice as rows ``x_1, ..., x_d, value``."""
    spec = f.spec
    if not 0 <= time_index < spec.n_t:
        raise StructuralError(f"time index {time_index} out of range")
    coords = spec.coords()
    sl = f.values[time_index]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(spec.d)] + ["value"])
        for idx in np.ndindex(*spec.space_shape):
            w.writerow([repr(float(coords[i])) for i in idx] + [repr(float(sl[idx]))])
