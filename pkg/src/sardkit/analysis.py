"""Post-estimation workflows: forward maps, counterfactual decomposition,
forecasting and convergence profiles.

The forward map advances a field by one step of length ``dt`` with the
discretized growth model solved for the time variation,

    (I - sum_j r_j M_j(y)) v = a + f y + sum_j g_j x_j(y),   y <- y + dt v,

where the reduced-form coefficients for step ``dt`` come from structural
ones through ``scale = 1 - dt*rho_phi/2``: ``a = alpha/scale``,
``f = phi/scale``, ``g_j = gamma_j/scale`` and ``r_j = dt*rho_j/(2*scale)``.
The left-hand side is applied matrix-free and solved by GMRES.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import linalg as spla

from .design import SardDesign, StructuralParams, build_regressors, correction_map, make_design
from .errors import NegativeForecast, NonFiniteField, StabilityViolation
from .geometry import SpatialDomain, build_stars, contiguity
from .gfdm import DM_SCALE, OperatorSet, build_operators
from .io import write_columns
from .kernels import KernelSpec, build_interaction


@dataclass
class Workspace:
    """Operators and kernels shared by every computation on one domain."""

    domain: SpatialDomain
    ops: OperatorSet
    W_A: object
    W_R: object
    s: np.ndarray | None = None
    h_A: float = 0.15
    h_R: float = 0.4
    _contiguity: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, domain, h_A, h_R, s=None, n_s=8, dm_scale=DM_SCALE, ops=None):
        if ops is None:
            ops = build_operators(domain, build_stars(domain, n_s), dm_scale)
        W_A = build_interaction(domain, KernelSpec(h_A))
        W_R = build_interaction(domain, KernelSpec(h_R))
        return cls(domain, ops, W_A, W_R, None if s is None else np.asarray(s, dtype=float), h_A, h_R)

    def with_bandwidths(self, h_A, h_R) -> "Workspace":
        """Same domain and operators, new kernels."""
        return replace(self, W_A=build_interaction(self.domain, KernelSpec(h_A)),
                       W_R=build_interaction(self.domain, KernelSpec(h_R)), h_A=h_A, h_R=h_R,
                       _contiguity=self._contiguity)

    def design(self, y0, y1, tau, components=None) -> SardDesign:
        return make_design(y0, y1, tau, self.ops, self.W_A, self.W_R, self.domain.areas, s=self.s,
                           ids=self.domain.ids, components=components)

    def contiguity(self, max_order, method="rook", threshold=None):
        key = (max_order, method, threshold)
        if key not in self._contiguity:
            self._contiguity[key] = contiguity(self.domain, method, max_order, threshold)
        return self._contiguity[key]


def step_scale(rho_phi: float, dt: float) -> float:
    return 1.0 - dt * rho_phi / 2.0


def exact_rho_phi(phi: float, dt: float) -> float:
    """``rho_phi`` whose scale makes one step of ``y' = a + phi y`` exact over ``dt``."""
    if phi == 0:
        return 0.0
    return (2.0 / dt) * (1.0 - phi * dt / math.expm1(phi * dt))


def structural_from_model(params, dt: float, components=("S", "A", "R", "D")) -> StructuralParams:
    """Structural parameters of a simulated model for use in a forward map with step ``dt``.

    The correction coefficients equal the interaction coefficients
    (``rho_j = gamma_j``), the second-order Taylor value.
    """
    if isinstance(params.alpha, np.ndarray):
        raise ValueError("the forward map needs a constant source term")
    gam = {"S": params.gamma_S, "A": params.gamma_A, "R": params.gamma_R, "D": params.gamma_D}
    gamma = {j: gam[j] for j in components}
    rho_phi = exact_rho_phi(params.phi, dt)
    return StructuralParams(params.alpha, params.phi, gamma, rho_phi, dict(gamma), step_scale(rho_phi, dt))


@dataclass
class ForwardMap:
    """One-step discretized dynamics with fixed structural parameters."""

    ws: Workspace
    params: StructuralParams
    tol: float = 1e-12

    def velocity(self, y, dt, zero=()) -> np.ndarray:
        """Time variation ``v`` over a step of ``dt`` from ``y``; ``gamma_j = 0`` for ``j in zero``."""
        p = self.params
        scale = step_scale(p.rho_phi, dt)
        if not scale > 0:
            raise StabilityViolation(f"step {dt} gives a nonpositive scale factor {scale}")
        xs = dict(zip(("S", "A", "R", "D"), build_regressors(y, self.ws.s, self.ws.ops, self.ws.W_A, self.ws.W_R)))
        rhs = p.alpha + p.phi * y
        for j, g in p.gamma.items():
            if j not in zero:
                rhs = rhs + g * xs[j]
        rhs = rhs / scale
        corr = {j: dt * r / (2.0 * scale) for j, r in p.rho.items() if r}
        if not corr:
            return rhs
        W = {"A": self.ws.W_A, "R": self.ws.W_R}
        ops, s = self.ws.ops, self.ws.s

        def apply(v):
            out = np.array(v, dtype=float)
            for j, c in corr.items():
                out -= c * correction_map(j, v, y, s, ops, W.get(j))
            return out

        n = y.size
        A = spla.LinearOperator((n, n), matvec=apply, dtype=float)
        v, info = spla.gmres(A, rhs, x0=rhs, rtol=self.tol, atol=0.0, restart=50, maxiter=200)
        if info != 0:
            raise StabilityViolation(f"forward-map solve did not converge (info={info})")
        return v

    def run(self, y0, horizon, dt=None, zero=(), blowup=1e6) -> np.ndarray:
        """Levels at ``0, dt, 2dt, ..., horizon`` (rows).

        ``dt`` defaults to the largest step not exceeding one time unit that
        divides ``horizon`` evenly.
        """
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        steps = max(1, math.ceil(horizon - 1e-9)) if dt is None else max(1, round(horizon / dt))
        dt = horizon / steps
        y = np.array(y0, dtype=float)
        scale0 = max(np.abs(y).max(initial=0.0), 1.0)
        out = [y.copy()]
        for _ in range(steps):
            y = y + dt * self.velocity(y, dt, zero)
            if not np.all(np.isfinite(y)):
                raise NonFiniteField("forward map produced a non-finite field")
            if np.abs(y).max() > blowup * scale0:
                raise StabilityViolation("forward map diverged")
            out.append(y.copy())
        return np.array(out)


def annualized_growth(y_end, y0, horizon):
    """``(y_end / y0)^(1/horizon) - 1``; ``nan`` where the ratio is not positive."""
    ratio = np.asarray(y_end, dtype=float) / np.asarray(y0, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(ratio > 0, np.abs(ratio) ** (1.0 / horizon) - 1.0, np.nan)
    return g


@dataclass
class Decomposition:
    """Fitted growth, per-component contributions and the non-additive remainder."""

    ids: tuple
    growth: np.ndarray
    counterfactual: dict
    contributions: dict
    interaction: np.ndarray
    negative: np.ndarray
    horizon: float

    def to_csv(self, path):
        cols = {"g": self.growth}
        cols.update({f"g_{j}": v for j, v in self.contributions.items()})
        cols["interaction"] = self.interaction
        cols["negative"] = self.negative.astype(int)
        return write_columns(path, cols, self.ids)


def decompose(params: StructuralParams, ws: Workspace, y0, horizon, dt=None, strict=False) -> Decomposition:
    """Counterfactual growth contributions of each component.

    The contribution of ``j`` is the fitted annualized growth minus the growth
    of a forward run with ``gamma_j = 0`` (all other coefficients unchanged).
    Locations whose forecast level is not positive get ``nan`` growth and are
    flagged in ``negative``; with ``strict`` they raise
    :class:`NegativeForecast` instead.
    """
    fm = ForwardMap(ws, params)
    y0 = np.asarray(y0, dtype=float)
    base = fm.run(y0, horizon, dt)[-1]
    g = annualized_growth(base, y0, horizon)
    negative = ~np.isfinite(g)
    cf, contrib = {}, {}
    for j in params.gamma:
        yj = fm.run(y0, horizon, dt, zero=(j,))[-1]
        cf[j] = annualized_growth(yj, y0, horizon)
        negative |= ~np.isfinite(cf[j])
        contrib[j] = g - cf[j]
    if strict and negative.any():
        raise NegativeForecast(f"{int(negative.sum())} locations have nonpositive forecasts")
    inter = g - sum(contrib.values()) if contrib else g.copy()
    return Decomposition(ws.domain.ids, g, cf, contrib, inter, negative, float(horizon))


@dataclass
class Forecast:
    ids: tuple
    times: np.ndarray
    levels: np.ndarray
    growth: np.ndarray

    def to_csv(self, path):
        cols = {f"y_t{t:g}": row for t, row in zip(self.times, self.levels)}
        cols["growth"] = self.growth
        return write_columns(path, cols, self.ids)


def forecast(params: StructuralParams, ws: Workspace, y0, years, dt=None) -> Forecast:
    """Iterate the fitted dynamics for ``years`` time units from ``y0``.

    Raises
    ------
    StabilityViolation
        If the iteration diverges.
    """
    fm = ForwardMap(ws, params)
    levels = fm.run(y0, years, dt)
    times = np.linspace(0.0, years, levels.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        growth = annualized_growth(levels[-1], levels[0], years)
    return Forecast(ws.domain.ids, times, levels, growth)


# --- convergence profiles -------------------------------------------------

def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(x.std(ddof=1), (q75 - q25) / 1.349) if x.size > 1 else 0.0
    if spread <= 0:
        spread = x.std(ddof=1) if x.size > 1 and x.std(ddof=1) > 0 else 1.0
    return 0.9 * spread * x.size ** (-0.2)


def nadaraya_watson(x, y, grid, bandwidth) -> np.ndarray:
    """Gaussian-kernel local-constant regression of ``y`` on ``x`` evaluated at ``grid``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = (np.asarray(grid, dtype=float)[:, None] - x[None, :]) / bandwidth
    w = np.exp(-0.5 * u * u)
    den = w.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (w @ y) / den


@dataclass
class Profile:
    grid: np.ndarray
    curve: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    bandwidth: float

    def to_csv(self, path):
        return write_columns(path, {"logy0": self.grid, "curve": self.curve, "lo": self.lo, "hi": self.hi})


def convergence_profile(contributions: dict, y0, points=50, bandwidth=None, reps=200, level=0.95, seed=0) -> dict:
    """Kernel regression of each contribution on ``log y0`` with pairs-bootstrap bands.

    Locations with non-finite contribution or nonpositive ``y0`` are dropped.
    """
    y0 = np.asarray(y0, dtype=float)
    rng = np.random.default_rng(seed)
    out = {}
    for j, g in contributions.items():
        g = np.asarray(g, dtype=float)
        ok = np.isfinite(g) & (y0 > 0)
        x, v = np.log(y0[ok]), g[ok]
        h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
        grid = np.linspace(x.min(), x.max(), points)
        curve = nadaraya_watson(x, v, grid, h)
        if reps > 0:
            draws = np.empty((reps, points))
            for b in range(reps):
                idx = rng.integers(0, x.size, x.size)
                draws[b] = nadaraya_watson(x[idx], v[idx], grid, h)
            a = (1 - level) / 2
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                lo, hi = np.nanquantile(draws, [a, 1 - a], axis=0)
        else:
            lo = hi = np.full(points, np.nan)
        out[j] = Profile(grid, curve, lo, hi, h)
    return out
