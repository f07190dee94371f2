"""Spectral time stepping for the stochastic Allen-Cahn equation on the torus.

Each step integrates the Laplacian exactly per Fourier mode and treats the
reaction, noise and control explicitly (exponential Euler):

    u^{n+1} = E u^n + Phi (C_eff u^n - (u^n)^3 + sqrt(eps) xi_delta^n + h^n)

with ``E = exp(-4 pi^2 |k|^2 dt)`` and ``Phi = (1 - E)/(4 pi^2 |k|^2)``. The
linear part is unconditionally stable and coincides with the heat integrator
of :mod:`aclab.fields`, so with the cubic switched off the solver reproduces
``heat_convolve`` to roundoff.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from aclab.errors import ConfigurationError, StructuralError
from aclab.fields import GridField, GridSpec, heat_factors, write_field
from aclab.noise import NoiseRealization, _get_mollifier, check_resolvable, mollify_values
from aclab.renorm import RenormConstants, renorm_constants

__all__ = [
    "SolveConfig",
    "Trajectory",
    "level_spec",
    "effective_constant",
    "solve",
    "solve_batch",
    "solve_deterministic",
    "save_trajectory",
]

DEFAULT_BLOWUP = 1e6


def level_spec(spec: GridSpec) -> GridSpec:
    """Grid holding the ``n_t + 1`` time levels ``0, dt, ..., T`` of a trajectory."""
    return spec.with_(T=spec.T + spec.dt, n_t=spec.n_t + 1)


@dataclass(frozen=True, eq=False)
class SolveConfig:
    spec: GridSpec
    C: float
    eps: float = 0.0
    delta: float = 0.0
    renormalised: bool = False
    u0: Optional[np.ndarray] = field(default=None, repr=False)
    blowup_threshold: float = DEFAULT_BLOWUP
    mollifier: str = "bump"
    dealias: bool = False
    constants: Optional[RenormConstants] = None

    @property
    def d(self) -> int:
        return self.spec.d

    def initial(self) -> np.ndarray:
        if self.u0 is None:
            return np.zeros(self.spec.space_shape)
        u0 = np.asarray(self.u0, dtype=np.float64)
        if u0.shape != self.spec.space_shape:
            raise ConfigurationError(f"u0 has shape {u0.shape}, expected {self.spec.space_shape}")
        return u0

    def with_(self, **changes) -> SolveConfig:
        return replace(self, **changes)


def effective_constant(cfg: SolveConfig) -> float:
    """``C + 3 eps C1 - 9 eps^2 C2`` when renormalised (``C2`` only in d=3), else ``C``."""
    if not cfg.renormalised or cfg.eps == 0:
        return float(cfg.C)
    k = cfg.constants
    if k is None:
        k = renorm_constants(cfg.d, cfg.delta, _get_mollifier(cfg.mollifier), cfg.spec)
    out = cfg.C + 3.0 * cfg.eps * k.c1
    if cfg.d == 3:
        out -= 9.0 * cfg.eps**2 * k.c2
    return float(out)


def validate(cfg: SolveConfig, c_eff: float) -> None:
    spec = cfg.spec
    if cfg.eps < 0:
        raise ConfigurationError("eps must be non-negative")
    if cfg.blowup_threshold <= 0:
        raise ConfigurationError("blowup threshold must be positive")
    if cfg.eps > 0 and cfg.delta > 0:
        if spec.dt > cfg.delta**2 / 2.0 * (1 + 1e-12):
            raise ConfigurationError(f"dt={spec.dt:.3g} exceeds delta^2/2={cfg.delta**2 / 2:.3g}")
        if spec.dx > cfg.delta / 2.0 * (1 + 1e-12):
            raise ConfigurationError(f"dx={spec.dx:.3g} exceeds delta/2={cfg.delta / 2:.3g}")
    u0 = cfg.initial()
    sup0 = float(np.max(np.abs(u0))) if u0.size else 0.0
    bound = 0.2 / max(1.0, abs(c_eff), sup0**2)
    if spec.dt > bound * (1 + 1e-12):
        raise ConfigurationError(f"dt={spec.dt:.3g} violates the stability bound {bound:.3g}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution levels ``u^0, ..., u^m`` with ``m = n_t`` unless the run blew up.

    ``blowup_time`` is the first time at which the sup norm reached the cap;
    the levels stop just before it. Such a trajectory stands for the cemetery
    state in downstream statistics.
    """

    spec: GridSpec
    values: np.ndarray = field(repr=False)
    C: float
    C_eff: float
    eps: float
    delta: float
    renormalised: bool
    blowup_threshold: float = DEFAULT_BLOWUP
    blowup_time: Optional[float] = None

    @property
    def blown_up(self) -> bool:
        return self.blowup_time is not None

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    @property
    def u(self) -> GridField:
        """All time levels as a field on :func:`level_spec`; complete runs only."""
        if self.blown_up:
            raise StructuralError("a blown-up trajectory has no complete field")
        return GridField(level_spec(self.spec), self.values)

    def metadata(self) -> dict:
        return {
            "d": self.spec.d, "T": self.spec.T, "n_t": self.spec.n_t, "n_x": self.spec.n_x,
            "C": self.C, "C_eff": self.C_eff, "eps": self.eps, "delta": self.delta,
            "renormalised": self.renormalised, "blowup_threshold": self.blowup_threshold,
            "blowup_time": self.blowup_time, "levels": int(self.values.shape[0]),
        }


def _dealias_mask(spec: GridSpec) -> np.ndarray:
    n = spec.n_x
    k = np.abs(np.fft.fftfreq(n, 1.0 / n))
    kr = np.fft.rfftfreq(n, 1.0 / n)
    cut = n / 3.0
    grids = np.meshgrid(*([k] * (spec.d - 1) + [kr]), indexing="ij")
    mask = np.ones(grids[0].shape, dtype=bool)
    for g in grids:
        mask &= g < cut
    return mask


def _forcing(cfg: SolveConfig, noise: Optional[np.ndarray], h: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Combined explicit forcing ``sqrt(eps) xi_delta + h``, batch axes leading."""
    spec = cfg.spec
    out = None
    if cfg.eps > 0:
        if noise is None:
            raise ConfigurationError("a noise realization is required when eps > 0")
        check_resolvable(spec, cfg.delta, cfg.mollifier)
        out = math.sqrt(cfg.eps) * mollify_values(noise, spec, cfg.delta, cfg.mollifier)
    if h is not None:
        h = np.asarray(h, dtype=np.float64)
        if h.shape[-(spec.d + 1):] != spec.shape:
            raise StructuralError("control does not match the grid")
        out = h if out is None else out + h
    return out


def _step_loop(cfg: SolveConfig, c_eff: float, u0: np.ndarray, forcing: Optional[np.ndarray], batch: Optional[int]):
    spec = cfg.spec
    d = spec.d
    s_axes = tuple(range(-d, 0))
    E, Phi = heat_factors(spec)
    mask = _dealias_mask(spec) if cfg.dealias else None
    shape = ((batch,) if batch is not None else ()) + spec.space_shape
    out = np.empty(((batch,) if batch is not None else ()) + (spec.n_t + 1,) + spec.space_shape)
    u = np.broadcast_to(u0, shape).astype(np.float64, copy=True)
    alive = np.ones(batch if batch is not None else 1, dtype=bool)
    first_blow = np.full(alive.shape, -1, dtype=np.int64)
    cap = cfg.blowup_threshold
    if batch is not None:
        out[:, 0] = u
    else:
        out[0] = u
    for n in range(spec.n_t):
        cubic = u * u * u
        if mask is not None:
            cubic = np.fft.irfftn(mask * np.fft.rfftn(cubic, axes=s_axes), s=spec.space_shape, axes=s_axes)
        rhs = c_eff * u - cubic
        if forcing is not None:
            rhs = rhs + (forcing[:, n] if forcing.ndim == d + 2 else forcing[n])
        U = E * np.fft.rfftn(u, axes=s_axes) + Phi * np.fft.rfftn(rhs, axes=s_axes)
        u = np.fft.irfftn(U, s=spec.space_shape, axes=s_axes)
        sup = np.max(np.abs(u.reshape(alive.size, -1)), axis=1)
        bad = ~(sup < cap) & alive
        if bad.any():
            first_blow[bad] = n + 1
            alive &= ~bad
            if batch is None:
                return out[: n + 1], (n + 1) * spec.dt
            u[bad] = 0.0  # keep dead members finite; their levels are masked below
        if batch is not None:
            out[:, n + 1] = u
        else:
            out[n + 1] = u
    if batch is None:
        return out, None
    for b in np.nonzero(first_blow >= 0)[0]:
        out[b, first_blow[b]:] = np.nan
    times = np.where(first_blow >= 0, first_blow * spec.dt, np.nan)
    return out, times


def solve(cfg: SolveConfig, xi: NoiseRealization | None = None, h: GridField | None = None) -> Trajectory:
    """Solve on ``[0, T]``; returns ``n_t + 1`` levels or fewer after a blowup."""
    c_eff = effective_constant(cfg)
    validate(cfg, c_eff)
    if xi is not None and xi.spec != cfg.spec:
        raise StructuralError("noise grid does not match the solver grid")
    if h is not None and h.spec != cfg.spec:
        raise StructuralError("control grid does not match the solver grid")
    forcing = _forcing(cfg, None if xi is None else xi.values, None if h is None else h.values)
    values, t_blow = _step_loop(cfg, c_eff, cfg.initial(), forcing, None)
    return Trajectory(cfg.spec, values, C=float(cfg.C), C_eff=c_eff, eps=float(cfg.eps),
                      delta=float(cfg.delta), renormalised=bool(cfg.renormalised),
                      blowup_threshold=float(cfg.blowup_threshold), blowup_time=t_blow)


def solve_batch(cfg: SolveConfig, noise: np.ndarray | None = None, h: np.ndarray | None = None):
    """Solve for a stack of noises (shape ``(B,) + spec.shape``) at once.

    Returns ``(levels, blowup_times)`` where ``levels`` has shape
    ``(B, n_t + 1, ...)``; members that blew up carry NaN from the blowup
    level on and a finite entry in ``blowup_times`` (NaN otherwise). Each
    member matches :func:`solve` on the same inputs.
    """
    c_eff = effective_constant(cfg)
    validate(cfg, c_eff)
    if noise is None:
        raise ConfigurationError("solve_batch needs a noise stack")
    noise = np.asarray(noise, dtype=np.float64)
    B = noise.shape[0]
    forcing = _forcing(cfg, noise, None)
    if h is not None:
        h = np.asarray(h, dtype=np.float64)
        forcing = h if forcing is None else forcing + h
    return _step_loop(cfg, c_eff, cfg.initial(), forcing, B)


def solve_deterministic(cfg: SolveConfig, h: GridField | None = None) -> Trajectory:
    """The control-to-state map ``h -> S(h)``; same code path as :func:`solve`."""
    if cfg.eps != 0:
        raise ConfigurationError("solve_deterministic requires eps = 0")
    return solve(cfg, None, h)


def save_trajectory(prefix, traj: Trajectory) -> None:
    """Write ``<prefix>.bin`` (field format) and ``<prefix>.json`` (metadata)."""
    levels = traj.values.shape[0]
    spec = traj.spec.with_(n_t=levels, T=levels * traj.spec.dt)
    lv = GridField(spec, traj.values)
    write_field(f"{prefix}.bin", lv)
    with open(f"{prefix}.json", "w") as fh:
        json.dump(traj.metadata(), fh, indent=2, sort_keys=True)
