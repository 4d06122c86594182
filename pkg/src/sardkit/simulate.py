"""Forward integration of the aggregation-repulsion-diffusion growth model.

The space-discretized right-hand side is

    dy/dt = a + phi*y + gamma_S*div(y grad s) + gamma_A*div(y grad W_A y)
            + gamma_R*div(y grad W_R y) + gamma_D*lap(y)

with every ``div(y grad u)`` evaluated as ``M_z1(y * M_z1 u) + M_z2(y * M_z2 u)``.
Time stepping is classical RK4 with a step bounded by diffusive and
advective CFL limits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import NonFiniteField, StabilityViolation
from .geometry import SpatialDomain, build_stars, grid_domain
from .gfdm import DM_SCALE, OperatorSet, build_operators
from .kernels import GridConvolution, KernelSpec, build_interaction


@dataclass(frozen=True)
class ModelParams:
    """Structural parameters of the growth model.

    ``alpha`` is the source term (scalar or per-location array). ``s`` is
    the exogenous field at the locations; ``None`` means a flat field.
    """

    alpha: float | np.ndarray = 0.01
    phi: float = 0.01
    gamma_S: float = 0.0
    gamma_A: float = -0.00175
    gamma_R: float = 0.0025
    gamma_D: float = 0.00525
    h_A: float = 0.15
    h_R: float = 0.4
    s: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma_D < 0:
            raise ValueError("gamma_D must be nonnegative; the model is ill-posed otherwise")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class PdeState:
    t: float
    y: np.ndarray
    domain: SpatialDomain | None = field(default=None, repr=False)

    def mass(self) -> float:
        """Area-weighted total ``sum_i y_i A_i``."""
        return float(self.y @ self.domain.areas)


@dataclass
class Discretization:
    """Operators shared by every right-hand-side evaluation on one domain.

    ``W_A`` and ``W_R`` are anything supporting ``@`` on a field vector:
    an :class:`~sardkit.kernels.InteractionMatrix` or a
    :class:`~sardkit.kernels.GridConvolution`.
    """

    domain: SpatialDomain
    ops: OperatorSet
    W_A: object
    W_R: object
    spacing: float

    @classmethod
    def build(cls, domain, params: ModelParams, n_s=8, dm_scale=DM_SCALE, grid_shape=None):
        """Assemble operators; pass ``grid_shape=(nx, ny)`` for FFT kernels on a uniform torus."""
        stars = build_stars(domain, n_s)
        ops = build_operators(domain, stars, dm_scale)
        spacing = float(np.sqrt((stars.offsets**2).sum(axis=2)).min())
        if grid_shape is not None:
            nx, ny = grid_shape
            W_A = GridConvolution.for_domain(domain, KernelSpec(params.h_A), nx, ny)
            W_R = GridConvolution.for_domain(domain, KernelSpec(params.h_R), nx, ny)
        else:
            W_A = build_interaction(domain, KernelSpec(params.h_A))
            W_R = build_interaction(domain, KernelSpec(params.h_R))
        return cls(domain, ops, W_A, W_R, spacing)

    @classmethod
    def on_grid(cls, n, params: ModelParams, width=1.0, height=1.0, n_s=8, dm_scale=DM_SCALE):
        domain = grid_domain(n, n, width, height, torus=True)
        return cls.build(domain, params, n_s, dm_scale, grid_shape=(n, n))


def _flux_div(ops, y, u):
    return ops.M_z1 @ (y * (ops.M_z1 @ u)) + ops.M_z2 @ (y * (ops.M_z2 @ u))


def _rhs(y, params: ModelParams, disc: Discretization, want_speed=False):
    ops = disc.ops
    out = params.alpha + params.phi * y
    vx = np.zeros_like(y) if want_speed else None
    vy = np.zeros_like(y) if want_speed else None
    pot = []
    if params.gamma_S and params.s is not None:
        pot.append((params.gamma_S, np.asarray(params.s, dtype=float)))
    if params.gamma_A:
        pot.append((params.gamma_A, disc.W_A @ y))
    if params.gamma_R:
        pot.append((params.gamma_R, disc.W_R @ y))
    for g, u in pot:
        gx = ops.M_z1 @ u
        gy = ops.M_z2 @ u
        out = out + g * (ops.M_z1 @ (y * gx) + ops.M_z2 @ (y * gy))
        if want_speed:
            vx += g * gx
            vy += g * gy
    if params.gamma_D:
        out = out + params.gamma_D * (ops.M_z1z1 @ y + ops.M_z2z2 @ y)
    if not np.all(np.isfinite(out)):
        raise NonFiniteField("non-finite value in the right-hand side")
    if want_speed:
        return out, float(np.sqrt(vx * vx + vy * vy).max(initial=0.0))
    return out


def rhs(state: PdeState, params: ModelParams, ops: OperatorSet, W_A, W_R) -> np.ndarray:
    """Time derivative of the field for the space-discretized model."""
    disc = Discretization(state.domain, ops, W_A, W_R, spacing=np.nan)
    y = np.asarray(state.y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteField("non-finite field")
    return _rhs(y, params, disc)


def stable_step(params: ModelParams, spacing: float, cfl=0.2, speed=0.0, adv_cfl=0.5) -> float:
    """Largest step allowed by ``dt <= cfl*h^2/gamma_D`` and ``dt <= adv_cfl*h/|v|``."""
    dt = math.inf
    if params.gamma_D > 0:
        dt = cfl * spacing**2 / params.gamma_D
    if speed > 0:
        dt = min(dt, adv_cfl * spacing / speed)
    return dt


@dataclass
class Trajectory:
    states: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def at(self, t) -> PdeState:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.states[k].t, t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"no sample at t={t}")
        return self.states[k]

    def __getitem__(self, k):
        return self.states[k]

    def __len__(self):
        return len(self.states)

    def to_csv(self, directory) -> list:
        """One ``id,y`` file per sample time; returns the written paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for st in self.states:
            path = directory / f"y_t{st.t:.6g}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["id", "y"])
                for i, v in zip(st.domain.ids, st.y):
                    w.writerow([i, repr(float(v))])
            paths.append(path)
        return paths


def integrate(
    state0: PdeState,
    params: ModelParams,
    t_end: float,
    dt: float,
    disc: Discretization | None = None,
    sample_times=None,
    cfl: float = 0.2,
    blowup: float = 1e6,
) -> Trajectory:
    """RK4 integration from ``state0.t`` to ``t_end``.

    The step is ``min(dt, cfl*h^2/gamma_D, 0.5*h/|v|)`` where ``h`` is the
    smallest star distance and ``|v|`` the largest drift speed at the start
    of the step; it is shortened further to land exactly on every sample time.

    Raises
    ------
    StabilityViolation
        If the field's sup-norm grows beyond ``blowup`` times its initial
        scale.
    NonFiniteField
    """
    if disc is None:
        disc = Discretization.build(state0.domain, params)
    if not dt > 0:
        raise ValueError("dt must be positive")
    t0 = float(state0.t)
    samples = [t_end] if sample_times is None else sorted(float(t) for t in sample_times)
    samples = [t for t in samples if t > t0 + 1e-12]
    if not samples or samples[-1] < t_end - 1e-12:
        samples.append(float(t_end))

    y = np.array(state0.y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteField("non-finite initial field")
    scale = max(np.abs(y).max(initial=0.0), 1.0)
    dt_diff = stable_step(params, disc.spacing, cfl)
    states = [PdeState(t0, y.copy(), disc.domain)]
    t = t0
    for target in samples:
        while t < target - 1e-12:
            k1, speed = _rhs(y, params, disc, want_speed=True)
            h = min(dt, dt_diff, stable_step(params, disc.spacing, cfl, speed), target - t)
            k2 = _rhs(y + 0.5 * h * k1, params, disc)
            k3 = _rhs(y + 0.5 * h * k2, params, disc)
            k4 = _rhs(y + h * k3, params, disc)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target if target - (t + h) < 1e-12 else t + h
            if np.abs(y).max() > blowup * scale:
                raise StabilityViolation(f"field exceeded {blowup:g}x its initial scale at t={t:.6g}")
        states.append(PdeState(target, y.copy(), disc.domain))
    return Trajectory(states)


# --- initial fields ------------------------------------------------------

@dataclass(frozen=True)
class PeakField:
    """Baseline plus periodic Gaussian bumps on a torus.

    ``peaks`` holds ``(x, y, amplitude, width)`` per bump.
    """

    baseline: float
    peaks: tuple

    def __call__(self, domain: SpatialDomain) -> np.ndarray:
        z = domain.locations
        out = np.full(domain.n, float(self.baseline))
        for cx, cy, amp, width in self.peaks:
            d = domain.wrap(z - np.array([cx, cy]))
            out += amp * np.exp(-0.5 * (d**2).sum(axis=1) / width**2)
        return out


#: three-peak initial condition of the Monte Carlo experiment: one broad
#: bump on the left, two narrow bumps on the right within aggregation range
THREE_PEAKS = PeakField(
    baseline=1.0,
    peaks=(
        (0.25, 0.50, 4.0, 0.10),
        (0.70, 0.40, 40.0, 0.04),
        (0.70, 0.60, 40.0, 0.04),
    ),
)


def block_average(y_fine: np.ndarray, n_fine: int, n_coarse: int) -> np.ndarray:
    """Area average of an ``n_fine^2`` grid field onto ``n_coarse^2`` cells (x-major order)."""
    if n_fine % n_coarse:
        raise ValueError(f"{n_fine} is not a multiple of {n_coarse}")
    k = n_fine // n_coarse
    return y_fine.reshape(n_coarse, k, n_coarse, k).mean(axis=(1, 3)).ravel()


def reference_size(n_coarse: int, minimum: int = 200) -> int:
    """Smallest multiple of ``n_coarse`` that is at least ``minimum``."""
    return n_coarse * max(1, math.ceil(minimum / n_coarse))


# --- cluster-formation experiment -----------------------------------------

def plateau_field(domain: SpatialDomain, center, half_width, ramp, mass=1.0) -> np.ndarray:
    """Flat square plateau with a smooth cosine ramp to zero, scaled to ``mass``."""
    z = domain.locations
    d = np.abs(domain.wrap(z - np.asarray(center, dtype=float)))

    def prof(u):
        t = np.clip((u - half_width) / ramp, 0.0, 1.0)
        return 0.5 * (1 + np.cos(np.pi * t))

    y = prof(d[:, 0]) * prof(d[:, 1])
    return y * (mass / float(y @ domain.areas))


def count_clusters(y: np.ndarray, shape, rel_threshold=0.5, periodic=True) -> int:
    """Connected components of ``y > rel_threshold * max(y)`` on a grid."""
    mask = (y > rel_threshold * y.max()).reshape(shape)
    labels, n = ndimage.label(mask)
    if periodic and n > 1:
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        pairs = [(labels[0, :], labels[-1, :]), (labels[:, 0], labels[:, -1])]
        for a, b in pairs:
            for u, v in zip(a, b):
                if u and v:
                    ru, rv = find(u), find(v)
                    if ru != rv:
                        parent[ru] = rv
        n = len({find(k) for k in range(1, n + 1)})
    return int(n)


@dataclass(frozen=True)
class ClusterSetup:
    """Aggregation-diffusion run from a centred plateau on a ``[0, side]^2`` torus.

    The plateau density must exceed ``gamma_D / |gamma_A|`` for the flat
    state to be unstable, which is why ``mass`` is well above one here.
    """

    side: float = 4.0
    n: int = 100
    half_width: float = 0.75
    ramp: float = 0.2
    mass: float = 5.0
    gamma_A: float = -0.01
    gamma_D: float = 0.005
    t_end: float = 20.0
    dt: float = 1.0
    sample_times: tuple = (2.5, 5.0, 10.0, 15.0, 20.0)

    def params(self, h_A: float) -> ModelParams:
        return ModelParams(alpha=0.0, phi=0.0, gamma_S=0.0, gamma_A=self.gamma_A, gamma_R=0.0,
                           gamma_D=self.gamma_D, h_A=h_A, h_R=h_A)

    def run(self, h_A: float) -> Trajectory:
        p = self.params(h_A)
        disc = Discretization.on_grid(self.n, p, self.side, self.side)
        c = 0.5 * self.side
        y0 = plateau_field(disc.domain, (c, c), self.half_width, self.ramp, self.mass)
        return integrate(PdeState(0.0, y0, disc.domain), p, self.t_end, self.dt, disc, self.sample_times)

    def cluster_counts(self, h_A: float) -> list:
        """Cluster count of each sampled state, starting with ``t = 0``."""
        return [count_clusters(s.y, (self.n, self.n)) for s in self.run(h_A).states]
