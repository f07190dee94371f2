"""Hermite polynomials, Wick powers and the minimal model built from noise.

The model components are lattice fields. ``<1>`` is the stationary solution
of the heat equation driven by the mollified noise (time-periodic, zero
spatial mean), its Wick powers give ``<2>`` and ``<3>``, and in three
dimensions ``<20> = P * <2>`` and ``<30> = P * <3>`` carry the second-order
trees through base-point-subtracted products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from aclab.algebra import chaos_order, tree, tree_name
from aclab.errors import StructuralError, UnsupportedDimensionError
from aclab.fields import GridField, GridSpec, TestFunction, heat_convolve, test_pair
from aclab.noise import NoiseRealization, _get_mollifier, mollify, sample_white_noise, trial_seed
from aclab.renorm import RenormConstants, renorm_constants

__all__ = [
    "hermite",
    "wick_power",
    "MinimalModel",
    "build_minimal_model",
    "model_pair_3d",
    "stationary_pair_3d",
    "ShiftCheck",
    "cameron_martin_shift_check",
    "ChaosSampleStats",
    "chaos_sample_stats",
]

BASE_TREES = ("Xi", "<1>", "<2>", "<3>")
SECOND_ORDER = ("<22>", "<31>", "<32>")


def hermite(k: int, x):
    """Normalized Hermite polynomial ``He_k(x)/sqrt(k!)``.

    Uses the three-term recurrence in normalized form, which avoids the
    factorial growth of the monic polynomials.
    """
    if int(k) != k or k < 0:
        raise StructuralError(f"Hermite order must be a non-negative integer, got {k!r}")
    x = np.asarray(x, dtype=np.float64)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    for n in range(int(k)):
        prev, cur = cur, (x * cur - math.sqrt(n) * prev) / math.sqrt(n + 1)
    return cur if cur.ndim else float(cur)


def wick_power(f: GridField, k: int, C: float) -> GridField:
    """``f^2 - C`` for ``k = 2`` and ``f^3 - 3 C f`` for ``k = 3``."""
    v = f.values
    if k == 2:
        return GridField(f.spec, v * v - C)
    if k == 3:
        return GridField(f.spec, v * v * v - 3.0 * C * v)
    raise UnsupportedDimensionError(f"Wick powers are implemented for k in {{2, 3}}, got {k!r}")


@dataclass(eq=False)
class MinimalModel:
    """Components of the (renormalised or canonical) minimal model on a grid.

    ``c1`` and ``c2`` are the constants actually subtracted, already scaled by
    the noise amplitude (``eps*C1`` and ``eps^2*C2``); both are zero for the
    canonical model.
    """

    d: int
    delta: float
    eps: float
    renormalised: bool
    components: Dict[str, GridField]
    c1: float
    c2: float
    constants: Optional[RenormConstants] = None
    _lazy: Dict[str, GridField] = field(default_factory=dict, repr=False)

    @property
    def spec(self) -> GridSpec:
        return self.components["<1>"].spec

    def __getitem__(self, name: str) -> GridField:
        if name in self.components:
            return self.components[name]
        if name in ("<20>", "<30>"):
            if self.d != 3:
                raise UnsupportedDimensionError(f"{name} is only used in d = 3")
            if name not in self._lazy:
                src = self.components["<2>" if name == "<20>" else "<3>"]
                self._lazy[name] = heat_convolve(src, stationary=True)
            return self._lazy[name]
        raise StructuralError(f"unknown model component {name!r}")

    def names(self) -> tuple:
        return tuple(self.components)


def _as_values(xi) -> tuple:
    if isinstance(xi, (NoiseRealization, GridField)):
        return xi.spec, xi.values
    raise StructuralError("expected a noise realization or a grid field")


def build_minimal_model(xi, delta: float, d: int, renormalised: bool, eps: float = 1.0,
                        rho=None, constants: RenormConstants | None = None) -> MinimalModel:
    """Build ``Xi, <1>, <2>, <3>`` from the driving noise ``sqrt(eps) * xi``.

    With ``renormalised=True`` the powers are Wick-recentred with ``eps*C1``
    (and the three-dimensional products later use ``eps^2*C2``). A
    deterministic field may be passed instead of noise, which yields the
    canonical lift of that field.
    """
    if eps < 0:
        raise StructuralError("eps must be non-negative")
    spec, values = _as_values(xi)
    if spec.d != d:
        raise StructuralError(f"noise lives in d={spec.d}, model requested for d={d}")
    rho = _get_mollifier(rho)
    amp = math.sqrt(eps)
    xd = mollify(GridField(spec, values), delta, rho)
    xd = GridField(spec, amp * xd.values)
    one = heat_convolve(xd, stationary=True)
    if renormalised:
        if constants is None:
            constants = renorm_constants(d, delta, rho, spec)
        c1 = eps * constants.c1
        c2 = eps**2 * constants.c2 if (d == 3 and constants.c2 is not None) else 0.0
    else:
        c1 = c2 = 0.0
    comps = {
        "Xi": xd,
        "<1>": one,
        "<2>": wick_power(one, 2, c1),
        "<3>": wick_power(one, 3, c1),
    }
    return MinimalModel(d=d, delta=float(delta), eps=float(eps), renormalised=bool(renormalised),
                        components=comps, c1=c1, c2=c2, constants=constants)


def _node_index(spec: GridSpec, z) -> tuple:
    z = tuple(z)
    if len(z) != spec.d + 1:
        raise StructuralError(f"base point needs {spec.d + 1} coordinates")
    i = int(round(z[0] / spec.dt))
    if not 0 <= i < spec.n_t:
        raise StructuralError("base point time lies outside the grid")
    return (i,) + tuple(int(round(c / spec.dx)) % spec.n_x for c in z[1:])


def _second_order_parts(model: MinimalModel, tau):
    """``(aux, factor, counterterm)`` with ``Pi_z tau = (aux - aux(z)) factor - counterterm``."""
    if model.d != 3:
        raise UnsupportedDimensionError("second-order trees are only built in d = 3")
    name = tau if isinstance(tau, str) else tree_name(tau)
    if name not in SECOND_ORDER:
        raise StructuralError(f"{name!r} is not one of {SECOND_ORDER}")
    if name == "<22>":
        return model["<20>"].values, model["<2>"].values, model.c2
    if name == "<32>":
        return model["<30>"].values, model["<2>"].values, 3.0 * model.c2 * model["<1>"].values
    return model["<30>"].values, model["<1>"].values, 0.0


def second_order_field(model: MinimalModel, tau, z) -> GridField:
    """Field ``zbar -> (Pi_z tau)(zbar)`` for ``tau`` in ``<22>, <31>, <32>``."""
    aux, factor, counter = _second_order_parts(model, tau)
    idx = _node_index(model.spec, z)
    return GridField(model.spec, (aux - aux[idx]) * factor - counter)


def model_pair_3d(model: MinimalModel, tau, z, phi: TestFunction) -> float:
    """Pair ``Pi_z tau`` with ``phi``; renormalised iff the model is.

    The auxiliary field is recentred at the base point ``z`` (snapped to the
    nearest node) before multiplying, so the product vanishes at ``z``.
    """
    return test_pair(second_order_field(model, tau, z), phi)


def stationary_pair_3d(model: MinimalModel, tau, scale: float) -> float:
    """Average of ``<Pi_z tau, phi_z>`` over every node ``z`` of the space-time torus.

    The model's law is invariant under lattice translations in space and in
    periodic time, so this has the same expectation as a single base point
    with far smaller variance. Fixed-base-point samples of these fourth-chaos
    pairings are strongly right-skewed.
    """
    aux, factor, counter = _second_order_parts(model, tau)
    spec = model.spec
    i0 = int(round(spec.T / 2 / spec.dt))
    centre = (i0 * spec.dt,) + (0.0,) * spec.d
    # phi centred at the origin node, wrapped periodically in time
    phi0 = np.roll(TestFunction(centre, scale).sample(spec), -i0, axis=0)
    axes = tuple(range(phi0.ndim))
    # (phi * factor)(y) = sum_zbar phi0(zbar - y) factor(zbar)
    corr = np.fft.irfftn(np.conj(np.fft.rfftn(phi0)) * np.fft.rfftn(factor), s=factor.shape, axes=axes)
    mass = phi0.sum()
    return float(spec.cell * (np.mean(aux * factor) * mass - np.mean(aux * corr) - np.mean(counter) * mass))


@dataclass(frozen=True)
class ShiftCheck:
    mean: float
    stderr: float
    canonical: float
    z_score: float
    n_samples: int


def cameron_martin_shift_check(h: GridField, delta: float, d: int, phi: TestFunction,
                               n_samples: int, seed: int = 0, rho=None) -> ShiftCheck:
    """Compare ``E <Pi^(xi+h) <2>, phi>`` with the canonical ``<(P * h_delta)^2, phi>``.

    The renormalised square of a shifted Gaussian has mean equal to the square
    of the shift, so the two sides agree in expectation.
    """
    spec = h.spec
    rho = _get_mollifier(rho)
    constants = renorm_constants(d, delta, rho, spec)
    canon = build_minimal_model(h, delta, d, renormalised=False, rho=rho)
    canonical = test_pair(canon["<2>"], phi)
    samples = np.empty(n_samples)
    for i in range(n_samples):
        xi = sample_white_noise(spec, trial_seed(seed, i))
        shifted = GridField(spec, xi.values + h.values)
        m = build_minimal_model(shifted, delta, d, renormalised=True, rho=rho, constants=constants)
        samples[i] = test_pair(m["<2>"], phi)
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("inf")
    z = (mean - canonical) / se if se > 0 else (0.0 if mean == canonical else math.inf)
    return ShiftCheck(mean=mean, stderr=se, canonical=canonical, z_score=float(z), n_samples=n_samples)


@dataclass(frozen=True)
class ChaosSampleStats:
    """Moments and a tail diagnostic for samples of one pairing ``<tau, phi>``.

    ``tail_exponent`` is the slope of ``log(-log P(|X| > t))`` against
    ``log t`` over the upper tail; a variable in chaos of order ``K`` has
    tails ``exp(-c t^(2/K))``, so the slope estimates ``2/K``.
    """

    symbol: str
    chaos_order: int
    n: int
    mean: float
    mean_stderr: float
    variance: float
    variance_stderr: float
    tail_exponent: float
    linear_fit_rss: float
    quadratic_fit_rss: float

    @property
    def tail_shape(self) -> str:
        return "linear" if self.linear_fit_rss <= self.quadratic_fit_rss else "quadratic"


def chaos_sample_stats(symbol, samples, tail_fraction: float = 0.1) -> ChaosSampleStats:
    """Summarize samples; the tail fits use the top ``tail_fraction`` of ``|X|``."""
    name = symbol if isinstance(symbol, str) else tree_name(symbol)
    K = chaos_order(tree(name)) if name in ("Xi", "<1>", "<2>", "<3>", "<22>", "<31>", "<32>") else 0
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    m4 = float(np.mean((x - mean) ** 4))
    var_se = math.sqrt(max(m4 - var**2, 0.0) / n)
    # Standardize, then look at the empirical survival of |X| over the tail.
    a = np.sort(np.abs((x - mean) / math.sqrt(var)))
    surv = 1.0 - np.arange(n) / n
    k0 = int(n * (1.0 - tail_fraction))
    t = a[k0:-1]
    ls = np.log(surv[k0:-1])
    keep = t > 0
    t, ls = t[keep], ls[keep]
    lin = np.polyfit(t, ls, 1, full=True)[1]
    quad = np.polyfit(t**2, ls, 1, full=True)[1]
    slope = np.polyfit(np.log(t), np.log(-ls), 1)[0]
    return ChaosSampleStats(
        symbol=name, chaos_order=K, n=n, mean=mean, mean_stderr=math.sqrt(var / n),
        variance=var, variance_stderr=var_se, tail_exponent=float(slope),
        linear_fit_rss=float(lin[0]) if len(lin) else 0.0,
        quadratic_fit_rss=float(quad[0]) if len(quad) else 0.0,
    )
