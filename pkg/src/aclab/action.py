"""The rate functional ``I(u) = 1/2 int (d_t u - Lap u - C u + u^3)^2`` and instantons.

The residual uses forward time differences with the Laplacian averaged over
the two ends of each step (trapezoid in time). Against the exponential Euler
solver this gives ``I(S(h)) = 1/2 ||h||^2`` up to a relative error of order
``(4 pi^2 |k|^2 dt)^2 / 12`` per mode, rather than the first-order error
a one-sided Laplacian would leave.

Instantons minimize ``1/2 ||h||^2 + mu/2 dist(S(h)(T), target)^2`` over grid
controls ``h`` with limited-memory BFGS; the gradient is the exact discrete
adjoint of the solver step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import optimize

from aclab.errors import ConfigurationError, InfiniteAction, StructuralError
from aclab.fields import GridField, GridSpec, apply_laplacian, heat_factors
from aclab.renorm import c_lambda
from aclab.solver import SolveConfig, Trajectory, level_spec, solve_deterministic

__all__ = [
    "ActionResult",
    "InstantonResult",
    "TerminalTarget",
    "residual",
    "action_value",
    "action_gradient",
    "minimize_action",
]


def _levels(u) -> tuple:
    """``(spec, levels)`` from a trajectory or a level field."""
    if isinstance(u, Trajectory):
        if u.blown_up:
            raise InfiniteAction("trajectory reached the blowup cap; its action is infinite")
        return u.spec, u.values
    if isinstance(u, GridField):
        s = u.spec
        if s.n_t < 2:
            raise StructuralError("need at least two time levels")
        spec = s.with_(n_t=s.n_t - 1, T=s.T - s.dt)
        return spec, u.values
    raise StructuralError("expected a Trajectory or a level GridField")


def _residual_values(spec: GridSpec, U: np.ndarray, C: float) -> np.ndarray:
    lap = apply_laplacian(U, spec)
    u0, u1 = U[:-1], U[1:]
    return (u1 - u0) / spec.dt - 0.5 * (lap[:-1] + lap[1:]) - C * u0 + u0**3


def residual(u, C: float) -> GridField:
    """Residual on the ``n_t`` steps; one fewer level than the trajectory."""
    spec, U = _levels(u)
    return GridField(spec, _residual_values(spec, U, C))


@dataclass(frozen=True)
class ActionResult:
    value: float
    residual: GridField
    gradient: Optional[GridField] = None


def action_value(u, C: float, with_gradient: bool = False) -> ActionResult:
    """``1/2 ||w||^2`` with the grid quadrature; optionally also the gradient."""
    spec, U = _levels(u)
    w = _residual_values(spec, U, C)
    value = 0.5 * spec.cell * float(np.sum(w * w))
    grad = GridField(level_spec(spec), _gradient_values(spec, U, w, C)) if with_gradient else None
    return ActionResult(value=value, residual=GridField(spec, w), gradient=grad)


def _gradient_values(spec: GridSpec, U: np.ndarray, w: np.ndarray, C: float) -> np.ndarray:
    n = spec.n_t
    W = np.zeros((n + 2,) + U.shape[1:])
    W[1:-1] = w  # W[m + 1] = w^m with w^{-1} = w^{n} = 0
    prev, cur = W[:-1], W[1:]
    lap = apply_laplacian(prev + cur, spec)
    return (prev - cur) / spec.dt - 0.5 * lap + (3.0 * U**2 - C) * cur


def action_gradient(u, C: float) -> GridField:
    """Gradient of the discrete action in the ``dt dx^d`` inner product.

    It is the exact transpose of the residual map applied to ``w``, so
    ``<grad, v>`` equals the directional derivative of the discrete action.
    """
    spec, U = _levels(u)
    w = _residual_values(spec, U, C)
    return GridField(level_spec(spec), _gradient_values(spec, U, w, C))


@dataclass(frozen=True, eq=False)
class TerminalTarget:
    """Penalize the spatial L2 distance of ``u(T)`` to a fixed profile."""

    target: np.ndarray

    def distance_and_gradient(self, uT: np.ndarray, spec: GridSpec):
        diff = uT - self.target
        dist = math.sqrt(spec.dx**spec.d * float(np.sum(diff * diff)))
        g = diff / dist if dist > 0 else np.zeros_like(diff)
        return dist, g


@dataclass
class InstantonResult:
    """Minimizing control and its trajectory.

    ``action`` is ``1/2 ||h||^2``. ``log`` holds one entry per accepted
    iteration with the penalty weight, objective and action at that point.
    """

    h: GridField
    trajectory: Trajectory
    action: float
    misfit: float
    success: bool
    message: str
    C_used: float
    log: List[dict] = field(default_factory=list)


def _adjoint_run(cfg: SolveConfig, C: float, h_vals: np.ndarray, penalty, mu: float):
    """Objective and gradient with respect to ``h`` (plain partial derivatives)."""
    spec = cfg.spec
    traj = solve_deterministic(cfg.with_(C=C), GridField(spec, h_vals))
    if traj.blown_up:
        return math.inf, None, traj, math.inf
    U = traj.values
    dist, gdist = penalty.distance_and_gradient(U[-1], spec)
    J = 0.5 * spec.cell * float(np.sum(h_vals * h_vals)) + 0.5 * mu * dist**2
    E, Phi = heat_factors(spec)
    d = spec.d
    axes = tuple(range(-d, 0))

    def mult(m, x):
        return np.fft.irfftn(m * np.fft.rfftn(x, axes=axes), s=spec.space_shape, axes=axes)

    # dJ/du^N as a plain gradient: mu * dist * d(dist)/du^N, dist using dx^d weights.
    p = mu * dist * gdist * spec.dx**d
    grad = np.empty_like(h_vals)
    for n in range(spec.n_t - 1, -1, -1):
        Pp = mult(Phi, p)
        grad[n] = Pp
        p = mult(E, p) + (C - 3.0 * U[n] ** 2) * Pp
    grad += spec.cell * h_vals
    return J, grad, traj, dist


def minimize_action(d: int, C: float, T: float, spec: GridSpec, u0=None, target=None, event=None,
                    lam: float | None = None, rho=None, mus=(10.0, 100.0, 1000.0),
                    maxiter: int = 500, gtol: float = 1e-9, misfit_tol: float | None = None,
                    h_init: GridField | None = None) -> InstantonResult:
    """Minimize ``1/2 ||h||^2`` subject to a terminal penalty with continuation in ``mu``.

    Exactly one of ``target`` (a terminal profile) or ``event`` (an object with
    ``distance_and_gradient(uT, spec)``) must be given. With ``lam`` the linear
    coefficient is replaced by ``c_lambda(C, lam, d, rho)``. A run that does
    not converge returns ``success=False`` with the reason in ``message``.
    """
    if spec.d != d or abs(spec.T - T) > 1e-12 * max(1.0, T):
        raise ConfigurationError("grid does not match the requested d and T")
    if (target is None) == (event is None):
        raise ConfigurationError("give exactly one of target or event")
    penalty = TerminalTarget(np.asarray(target, dtype=np.float64)) if target is not None else event
    C_used = float(C) if lam is None else c_lambda(C, lam, d, rho)
    cfg = SolveConfig(spec=spec, C=C_used, eps=0.0, u0=None if u0 is None else np.asarray(u0, dtype=np.float64))
    scale = math.sqrt(spec.cell)
    x = np.zeros(int(np.prod(spec.shape))) if h_init is None else np.asarray(h_init.values).ravel() * scale
    log: List[dict] = []
    ok = True
    message = "converged"
    last = {}

    for mu in mus:
        def fun(xv):
            h = (xv / scale).reshape(spec.shape)
            J, g, traj, dist = _adjoint_run(cfg, C_used, h, penalty, mu)
            last.update(x=xv.copy(), dist=dist, J=J)
            if g is None:
                return 1e300, np.zeros_like(xv)
            return J, g.ravel() / scale

        def callback(xk):
            if not np.array_equal(last.get("x"), xk):
                fun(xk)
            log.append({"mu": mu, "J": last["J"], "action": 0.5 * float(np.dot(xk, xk)),
                        "misfit": last["dist"], "h_norm": float(np.linalg.norm(xk))})

        res = optimize.minimize(fun, x, jac=True, method="L-BFGS-B", callback=callback,
                                options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20})
        x = res.x
        if not res.success and res.status != 0:
            ok = False
            message = f"mu={mu}: {res.message}"
            if "ABNORMAL" not in str(res.message).upper():
                break
            ok = True  # line search stalled at machine precision; treat as converged
            message = "converged (line search stalled at roundoff)"

    h = GridField(spec, (x / scale).reshape(spec.shape))
    traj = solve_deterministic(cfg, h)
    dist = penalty.distance_and_gradient(traj.values[-1], spec)[0] if not traj.blown_up else math.inf
    action = 0.5 * h.l2_norm_sq()
    if misfit_tol is not None and dist > misfit_tol:
        ok = False
        message = f"terminal misfit {dist:.3g} exceeds tolerance {misfit_tol:.3g}"
    return InstantonResult(h=h, trajectory=traj, action=action, misfit=dist, success=ok,
                           message=message, C_used=C_used, log=log)
