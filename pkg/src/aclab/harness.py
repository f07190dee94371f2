"""Diagonal schedules, rare-event Monte Carlo and comparison with instanton actions."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, ClassVar, List, Optional, Sequence

import numpy as np

from aclab.action import InstantonResult
from aclab.errors import ConfigurationError, DomainError, ResolutionError
from aclab.fields import GridSpec
from aclab.noise import check_resolvable, sample_white_noise_batch, trial_seed
from aclab.renorm import c_lambda
from aclab.solver import SolveConfig, solve_batch

__all__ = [
    "Schedule",
    "schedule_delta",
    "TerminalL2Exit",
    "SupNormExceedance",
    "TerminalSignChange",
    "AlwaysEvent",
    "LdpRow",
    "LdpTable",
    "estimate_rare_event",
    "RateReport",
    "compare_with_rate",
    "c_lambda_distances",
]

CONFIDENCE = 0.95


def _min_feasible_eps(d: int, lam: float, spec: GridSpec) -> float:
    delta_min = max(2.0 * spec.dx, math.sqrt(2.0 * spec.dt))
    if d == 3:
        return lam**2 * delta_min if lam > 0 else delta_min**2
    if d == 2:
        L = math.log(1.0 / delta_min)
        return lam**2 / L if lam > 0 else 1.0 / L**2
    return 0.0


def schedule_delta(d: int, lam: float, eps: float, spec: GridSpec | None = None) -> float:
    """Correlation length ``delta(eps)`` of the built-in diagonal schedules.

    ``d = 3``: ``eps / lam^2``, or ``sqrt(eps)`` for ``lam = 0``.
    ``d = 2``: ``exp(-lam^2 / eps)``, or ``exp(-eps^(-1/2))`` for ``lam = 0``.
    ``d = 1``: no renormalization is needed and the noise is left unmollified (0).
    With ``spec`` the result is checked against the grid and an unresolvable
    value raises :class:`ResolutionError` carrying the smallest feasible eps.
    """
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps!r}")
    if lam < 0:
        raise DomainError(f"lambda must be non-negative, got {lam!r}")
    if d == 3:
        delta = eps / lam**2 if lam > 0 else math.sqrt(eps)
    elif d == 2:
        delta = math.exp(-lam**2 / eps) if lam > 0 else math.exp(-1.0 / math.sqrt(eps))
    elif d == 1:
        delta = 0.0
    else:
        raise DomainError(f"unsupported dimension {d!r}")
    if spec is not None and delta > 0:
        try:
            check_resolvable(spec, delta)
        except ResolutionError as exc:
            raise ResolutionError(
                f"{exc} (schedule d={d}, lambda={lam:g}, eps={eps:g}; smallest feasible eps "
                f"{_min_feasible_eps(d, lam, spec):.4g})",
                required_n_x=exc.required_n_x, required_n_t=exc.required_n_t,
                min_eps=_min_feasible_eps(d, lam, spec),
            ) from None
    return delta


@dataclass(frozen=True)
class Schedule:
    """``eps -> delta(eps)``; a user function overrides the built-in for ``(d, lam)``."""

    d: int
    lam: float = 0.0
    fn: Optional[Callable[[float], float]] = None

    def __call__(self, eps: float, spec: GridSpec | None = None) -> float:
        if self.fn is not None:
            delta = float(self.fn(eps))
            if spec is not None and delta > 0:
                check_resolvable(spec, delta)
            return delta
        return schedule_delta(self.d, self.lam, eps, spec)

    def describe(self) -> dict:
        return {"d": self.d, "lambda": self.lam, "kind": "custom" if self.fn else "built-in"}


# Events act on a batch of trajectories ``(B, levels, ...)`` with NaN from the
# blowup level on. A blown-up member sits in the cemetery state. ``odd_symmetric``
# marks events invariant under ``u -> -u``.

def _norms(uT: np.ndarray, spec: GridSpec) -> np.ndarray:
    axes = tuple(range(-spec.d, 0))
    return np.sqrt(spec.dx**spec.d * np.sum(uT * uT, axis=axes))


@dataclass(frozen=True)
class TerminalL2Exit:
    """``||u(T)||_{L^2} >= radius``: the terminal state leaves the ball.

    A blown-up trajectory counts as an exit.
    """

    radius: float
    odd_symmetric: ClassVar[bool] = True

    def hits(self, levels: np.ndarray, blowup_times: np.ndarray, spec: GridSpec) -> np.ndarray:
        nrm = _norms(levels[:, -1], spec)
        return np.isfinite(blowup_times) | (np.nan_to_num(nrm, nan=np.inf) >= self.radius)

    def distance_and_gradient(self, uT: np.ndarray, spec: GridSpec):
        nrm = float(_norms(uT[None], spec)[0])
        dist = max(self.radius - nrm, 0.0)
        if dist == 0.0:
            return 0.0, np.zeros_like(uT)
        if nrm == 0.0:
            # Any direction leaves the ball; push along the constant mode.
            return dist, -np.ones_like(uT)
        return dist, -uT / nrm

    def describe(self) -> dict:
        return {"event": "terminal_l2_exit", "radius": self.radius}


@dataclass(frozen=True)
class SupNormExceedance:
    """``sup_{t, x} |u| > level`` at any time level (blowup included)."""

    level: float
    odd_symmetric: ClassVar[bool] = True

    def hits(self, levels: np.ndarray, blowup_times: np.ndarray, spec: GridSpec) -> np.ndarray:
        sup = np.nanmax(np.abs(levels.reshape(levels.shape[0], -1)), axis=1)
        return np.isfinite(blowup_times) | (sup > self.level)

    def describe(self) -> dict:
        return {"event": "sup_norm_exceedance", "level": self.level}


@dataclass(frozen=True)
class TerminalSignChange:
    """Spatial mean of ``u(T)`` has the opposite sign to that of ``u(0)`` and exceeds ``margin``.

    For ``C > 0`` the drift has wells at ``+-sqrt(C)``; starting in one well this
    is a tunnelling event.
    """

    margin: float = 0.0
    odd_symmetric: ClassVar[bool] = False

    def hits(self, levels: np.ndarray, blowup_times: np.ndarray, spec: GridSpec) -> np.ndarray:
        axes = tuple(range(-spec.d, 0))
        m0 = np.mean(levels[:, 0], axis=axes)
        mT = np.mean(np.nan_to_num(levels[:, -1]), axis=axes)
        s = np.sign(m0)
        return np.isfinite(blowup_times) | ((s != 0) & (-s * mT > self.margin))

    def describe(self) -> dict:
        return {"event": "terminal_sign_change", "margin": self.margin}


@dataclass(frozen=True)
class AlwaysEvent:
    odd_symmetric: ClassVar[bool] = True

    def hits(self, levels: np.ndarray, blowup_times: np.ndarray, spec: GridSpec) -> np.ndarray:
        return np.ones(levels.shape[0], dtype=bool)

    def describe(self) -> dict:
        return {"event": "always"}


@dataclass(frozen=True)
class LdpRow:
    """One ``eps`` of a rare-event scan.

    For a flagged row (no hits) ``p_hat`` is 0 and ``upper`` is the one-sided
    95% bound on the probability; ``rate`` is then the matching lower bound
    ``-eps log upper`` on ``-eps log P``.
    """

    eps: float
    delta: float
    trials: int
    hits: int
    p_hat: float
    stderr: float
    rate: float
    flagged: bool = False
    upper: Optional[float] = None

    @property
    def rate_stderr(self) -> float:
        if self.flagged or self.p_hat <= 0:
            return math.inf
        return self.eps * self.stderr / self.p_hat


@dataclass
class LdpTable:
    rows: List[LdpRow]
    event: dict
    estimator: str
    action: Optional[float] = None

    COLUMNS = ("eps", "delta", "trials", "hits", "p_hat", "stderr", "rate", "flagged", "upper")

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([repr(float(r.eps)), repr(float(r.delta)), r.trials, r.hits, repr(float(r.p_hat)),
                        repr(float(r.stderr)), repr(float(r.rate)), int(r.flagged),
                        "" if r.upper is None else repr(float(r.upper))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _chunk_contributions(job) -> np.ndarray:
    """Per-trial estimator values (indicator times weight) for one chunk of seeds."""
    cfg, event, seeds, h_star, signs = job
    spec = cfg.spec
    noise = sample_white_noise_batch(spec, seeds)
    if h_star is None:
        levels, times = solve_batch(cfg, noise)
        return event.hits(levels, times, spec).astype(np.float64)
    theta = h_star / math.sqrt(cfg.eps)
    axes = tuple(range(1, spec.d + 2))
    half_sq = 0.5 * spec.cell * float(np.sum(theta * theta))
    if signs is None:
        # Weight exp(-<h*, zeta>/sqrt(eps) - ||h*||^2/(2 eps)) with the grid inner product.
        logw = -spec.cell * np.sum(noise * theta, axis=axes) - half_sq
        noise += theta
    else:
        # Equal mixture of the shifts +-theta: weight exp(|theta|^2/2) / cosh(<theta, zeta'>).
        shift = np.asarray(signs, dtype=np.float64).reshape((-1,) + (1,) * (spec.d + 1)) * theta
        noise += shift
        a = np.abs(spec.cell * np.sum(noise * theta, axis=axes))
        logw = half_sq - a - np.log1p(np.exp(-2.0 * a)) + math.log(2.0)
    levels, times = solve_batch(cfg, noise)
    hit = event.hits(levels, times, spec)
    return np.where(hit, np.exp(logw), 0.0)


def _run_trials(cfg: SolveConfig, event, seeds: Sequence[int], h_star, chunk: int, workers: int,
                mirror: bool = False) -> np.ndarray:
    signs = np.where(np.arange(len(seeds)) % 2 == 0, 1.0, -1.0) if mirror else None
    jobs = [(cfg, event, list(seeds[i:i + chunk]), h_star, None if signs is None else signs[i:i + chunk])
            for i in range(0, len(seeds), chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_contributions, jobs))
    else:
        parts = [_chunk_contributions(j) for j in jobs]
    # Concatenating in seed order keeps the aggregate independent of the worker count.
    return np.concatenate(parts)


def estimate_rare_event(cfg: SolveConfig, schedule: Schedule, eps_list: Sequence[float], event,
                        trials: int, estimator: str = "plain", instanton=None, seed: int = 0,
                        chunk: int = 500, workers: int = 1, mirror: bool | None = None) -> LdpTable:
    """Estimate ``P(event)`` for each ``eps`` with ``delta = schedule(eps)``.

    ``estimator="tilted"`` needs ``instanton``: an :class:`InstantonResult` or a
    callable ``eps -> InstantonResult`` supplying the shift ``h*``. Trial ``i``
    at the ``j``-th eps uses noise seed ``trial_seed(trial_seed(seed, j), i)``.

    When the problem is odd-symmetric (zero initial data and an event with
    ``odd_symmetric``) the event has a mirror image around ``-h*`` that a
    single shift almost never visits. ``mirror`` (default: automatic) then
    shifts even trials by ``+h*`` and odd trials by ``-h*`` and weights by the
    equal mixture, which keeps the estimator unbiased over both.
    """
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    if estimator not in ("plain", "tilted"):
        raise ConfigurationError(f"unknown estimator {estimator!r}")
    if estimator == "tilted" and instanton is None:
        raise ConfigurationError("the tilted estimator needs an instanton")
    if mirror is None:
        u0 = cfg.initial()
        mirror = bool(getattr(event, "odd_symmetric", False)) and not np.any(u0)
    rows = []
    action = None
    for j, eps in enumerate(eps_list):
        delta = schedule(eps, cfg.spec)
        run_cfg = cfg.with_(eps=float(eps), delta=float(delta), constants=None)
        h_star = None
        if estimator == "tilted":
            inst = instanton(eps) if callable(instanton) else instanton
            h_star = np.asarray(inst.h.values)
            action = inst.action
        master = trial_seed(seed, j)
        seeds = [trial_seed(master, i) for i in range(trials)]
        vals = _run_trials(run_cfg, event, seeds, h_star, chunk, workers, mirror and h_star is not None)
        hits = int(np.count_nonzero(vals))
        p = float(np.sum(vals) / trials)
        if estimator == "plain":
            se = math.sqrt(p * (1.0 - p) / trials)
        else:
            se = float(np.std(vals, ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf
        if hits == 0:
            upper = 1.0 - (1.0 - CONFIDENCE) ** (1.0 / trials)
            rows.append(LdpRow(eps, delta, trials, 0, 0.0, se, -eps * math.log(upper), True, upper))
        else:
            rows.append(LdpRow(eps, delta, trials, hits, p, se, -eps * math.log(p) if p > 0 else math.inf))
    return LdpTable(rows=rows, event=event.describe(), estimator=estimator, action=action)


@dataclass
class RateReport:
    action: float
    eps: List[float]
    rates: List[float]
    rate_stderr: List[float]
    gaps: List[float]
    relative_gaps: List[float]
    flagged: List[bool]
    shrinking: bool
    monotone: bool
    verdict: str
    notes: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        def clean(x):
            return x if not isinstance(x, float) or math.isfinite(x) else None
        d = {k: ([clean(v) for v in val] if isinstance(val, list) else clean(val))
             for k, val in self.__dict__.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    def render(self) -> str:
        lines = [f"instanton action {self.action:.6g}", "eps        -eps log P   +-        gap"]
        for e, r, s, g, f in zip(self.eps, self.rates, self.rate_stderr, self.gaps, self.flagged):
            tag = "  (no hits; lower bound)" if f else ""
            lines.append(f"{e:<10.4g} {r:<12.6g} {s:<9.3g} {g:+.4g}{tag}")
        lines.append(f"verdict: {self.verdict}")
        lines.extend(self.notes)
        return "\n".join(lines)


def compare_with_rate(table: LdpTable, instanton) -> RateReport:
    """Compare ``-eps log P`` with the instanton action along decreasing eps.

    The verdict is "consistent" when the absolute gap to the action does not
    grow (beyond two standard errors) as eps decreases, "inconsistent"
    otherwise, and "insufficient" with fewer than two usable rows.
    """
    a = float(instanton.action if isinstance(instanton, InstantonResult) else instanton)
    rows = sorted(table.rows, key=lambda r: -r.eps)
    eps = [r.eps for r in rows]
    rates = [r.rate for r in rows]
    ses = [r.rate_stderr for r in rows]
    gaps = [r.rate - a for r in rows]
    rel = [abs(g) / a if a > 0 else (0.0 if g == 0 else math.inf) for g in gaps]
    flagged = [r.flagged for r in rows]
    usable = [i for i, r in enumerate(rows) if not r.flagged]
    notes = []
    if len(usable) < 2:
        shrinking = monotone = False
        verdict = "insufficient"
        notes.append("fewer than two rows with hits")
    else:
        shrinking = True
        monotone = True
        sign = 0
        for i, j in zip(usable, usable[1:]):
            tol = 2.0 * math.hypot(ses[i] if math.isfinite(ses[i]) else 0.0, ses[j] if math.isfinite(ses[j]) else 0.0)
            if abs(gaps[j]) > abs(gaps[i]) + tol:
                shrinking = False
            step = rates[j] - rates[i]
            if abs(step) > tol:
                s = 1 if step > 0 else -1
                if sign and s != sign:
                    monotone = False
                sign = s
        verdict = "consistent" if shrinking else "inconsistent"
    if any(flagged):
        notes.append("rows without hits report a one-sided bound and are excluded from the trend")
    return RateReport(action=a, eps=eps, rates=rates, rate_stderr=ses, gaps=gaps, relative_gaps=rel,
                      flagged=flagged, shrinking=shrinking, monotone=monotone, verdict=verdict, notes=notes)


def c_lambda_distances(cfg: SolveConfig, lam: float, eps_list: Sequence[float], n_seeds: int,
                       seed: int = 0, schedule: Schedule | None = None) -> List[np.ndarray]:
    """``||u(T) - v(T)||_{L^2}`` per seed for each eps along the two-dimensional schedule.

    ``u`` solves the unrenormalised mollified equation with ``C``; ``v`` the
    renormalised one with ``c_lambda(C, lam, 2)`` in place of ``C``. Both are
    driven by the same noise.
    """
    spec = cfg.spec
    if spec.d != 2:
        raise ConfigurationError("the C_lambda comparison is set up in d = 2")
    schedule = schedule or Schedule(2, lam)
    c_shift = c_lambda(cfg.C, lam, 2)
    out = []
    for j, eps in enumerate(eps_list):
        delta = schedule(eps, spec)
        master = trial_seed(seed, j)
        noise = sample_white_noise_batch(spec, [trial_seed(master, i) for i in range(n_seeds)])
        plain = cfg.with_(eps=float(eps), delta=delta, renormalised=False, constants=None)
        renorm = cfg.with_(C=c_shift, eps=float(eps), delta=delta, renormalised=True, constants=None)
        u, tu = solve_batch(plain, noise)
        v, tv = solve_batch(renorm, noise)
        dist = _norms(u[:, -1] - v[:, -1], spec)
        dist[np.isfinite(tu) | np.isfinite(tv)] = np.inf
        out.append(dist)
    return out
