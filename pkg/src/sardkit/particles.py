"""Interacting-agent simulation whose mean-field limit is the growth model.

Each agent moves by Euler-Maruyama steps of

    dX = -gamma_S grad S dt - m gamma_A (1/N_a) sum_j grad K_A(X - X_j) dt
         - m gamma_R (1/N_a) sum_j grad K_R(X - X_j) dt + sqrt(2 gamma_D) dB

on a flat torus, where ``m`` is the total mass the ensemble represents
(``m = 1`` for a probability density).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import _accel
from .kernels import C_K, KernelSpec, kernel_gradient


@dataclass(frozen=True)
class ParticleEnsemble:
    """Agent positions on ``[0, width) x [0, height)`` plus the random stream driving them.

    The generator is shared (not copied) by ensembles produced from this one,
    so a run is reproducible from the seed of the first ensemble.
    """

    positions: np.ndarray
    rng: np.random.Generator
    width: float = 1.0
    height: float = 1.0
    mass: float = 1.0
    t: float = 0.0

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def sample(cls, density, domain, n_agents, seed, mass=None, cell_shape=None):
        """Draw agents from a cell-constant density given on a uniform torus grid.

        ``density`` is per-location; agents are placed uniformly inside the
        chosen cell.  ``mass`` defaults to the integral of ``density``.
        """
        rng = np.random.default_rng(seed)
        w = np.asarray(density, dtype=float) * domain.areas
        if np.any(w < 0):
            raise ValueError("density must be nonnegative")
        total = w.sum()
        idx = rng.choice(domain.n, size=n_agents, p=w / total)
        if cell_shape is None:
            k = int(round(np.sqrt(domain.n)))
            cell_shape = (k, k)
        dx = domain.width / cell_shape[0]
        dy = domain.height / cell_shape[1]
        jitter = rng.uniform(-0.5, 0.5, size=(n_agents, 2)) * np.array([dx, dy])
        pos = np.mod(domain.locations[idx] + jitter, [domain.width, domain.height])
        return cls(pos, rng, domain.width, domain.height, total if mass is None else mass)


@_accel.njit
def _accumulate(fa, fr, i, j, dx, dy, h_a, h_r, peak_a, peak_r):
    r2 = dx * dx + dy * dy
    if r2 <= 0.0:
        return
    r = np.sqrt(r2)
    if r < h_a:
        q = r / h_a + 1.0
        g = -2.0 * peak_a / (q * q * q * h_a * r)
        fa[i, 0] += g * dx
        fa[i, 1] += g * dy
        fa[j, 0] -= g * dx
        fa[j, 1] -= g * dy
    if r < h_r:
        q = r / h_r + 1.0
        g = -2.0 * peak_r / (q * q * q * h_r * r)
        fr[i, 0] += g * dx
        fr[i, 1] += g * dy
        fr[j, 0] -= g * dx
        fr[j, 1] -= g * dy


@_accel.njit(fastmath=True)
def _all_pairs_numba(pos, width, height, h_a, h_r, peak_a, peak_r):
    # i-side sums stay in registers; j-side updates are scattered
    n = pos.shape[0]
    fa = np.zeros((n, 2))
    fr = np.zeros((n, 2))
    hw = 0.5 * width
    hh = 0.5 * height
    ia = 1.0 / h_a
    ir = 1.0 / h_r
    ha2 = h_a * h_a
    hr2 = h_r * h_r
    # nest the narrower kernel inside the wider one
    swap = h_a > h_r
    for i in range(n):
        xi = pos[i, 0]
        yi = pos[i, 1]
        ax = 0.0
        ay = 0.0
        rx = 0.0
        ry = 0.0
        for j in range(i + 1, n):
            dx = xi - pos[j, 0]
            dy = yi - pos[j, 1]
            if dx > hw:
                dx -= width
            elif dx < -hw:
                dx += width
            if dy > hh:
                dy -= height
            elif dy < -hh:
                dy += height
            r2 = dx * dx + dy * dy
            if r2 <= 0.0:
                continue
            if r2 < hr2:
                r = np.sqrt(r2)
                q = r * ir + 1.0
                c = -2.0 * peak_r * ir / (q * q * q * r)
                rx += c * dx
                ry += c * dy
                fr[j, 0] -= c * dx
                fr[j, 1] -= c * dy
                if r2 < ha2:
                    q = r * ia + 1.0
                    c = -2.0 * peak_a * ia / (q * q * q * r)
                    ax += c * dx
                    ay += c * dy
                    fa[j, 0] -= c * dx
                    fa[j, 1] -= c * dy
            elif swap and r2 < ha2:
                r = np.sqrt(r2)
                q = r * ia + 1.0
                c = -2.0 * peak_a * ia / (q * q * q * r)
                ax += c * dx
                ay += c * dy
                fa[j, 0] -= c * dx
                fa[j, 1] -= c * dy
        fa[i, 0] += ax
        fa[i, 1] += ay
        fr[i, 0] += rx
        fr[i, 1] += ry
    return fa, fr


@_accel.njit
def _pair_forces_numba(pos, width, height, h_a, h_r, peak_a, peak_r):
    n = pos.shape[0]
    cut = max(h_a, h_r)
    ncx = max(1, int(width // cut))
    ncy = max(1, int(height // cut))
    if ncx < 3 or ncy < 3:
        # the cut-off spans the torus: every pair is a candidate
        return _all_pairs_numba(pos, width, height, h_a, h_r, peak_a, peak_r)
    cell = np.empty(n, np.int64)
    for i in range(n):
        cx = min(int(pos[i, 0] / width * ncx), ncx - 1)
        cy = min(int(pos[i, 1] / height * ncy), ncy - 1)
        cell[i] = cx * ncy + cy
    order = np.argsort(cell, kind="mergesort")
    start = np.zeros(ncx * ncy + 1, np.int64)
    for i in range(n):
        start[cell[i] + 1] += 1
    for c in range(ncx * ncy):
        start[c + 1] += start[c]
    hw = 0.5 * width
    hh = 0.5 * height
    fa = np.zeros((n, 2))
    fr = np.zeros((n, 2))
    for c in range(ncx * ncy):
        cx = c // ncy
        cy = c % ncy
        # half stencil: the cell itself plus 4 of its 8 neighbours
        for k in range(5 if ncx > 1 else 1):
            if k == 0:
                d = c
            else:
                ax = (0, 1, 1, 1)[k - 1]
                ay = (1, -1, 0, 1)[k - 1]
                d = ((cx + ax) % ncx) * ncy + (cy + ay) % ncy
            for s in range(start[c], start[c + 1]):
                i = order[s]
                xi = pos[i, 0]
                yi = pos[i, 1]
                t0 = s + 1 if d == c else start[d]
                for t in range(t0, start[d + 1]):
                    j = order[t]
                    dx = xi - pos[j, 0]
                    dy = yi - pos[j, 1]
                    if dx > hw:
                        dx -= width
                    elif dx < -hw:
                        dx += width
                    if dy > hh:
                        dy -= height
                    elif dy < -hh:
                        dy += height
                    _accumulate(fa, fr, i, j, dx, dy, h_a, h_r, peak_a, peak_r)
    return fa, fr


def _pair_forces_numpy(pos, width, height, h_a, h_r):
    tree = cKDTree(pos, boxsize=(width, height))
    pairs = tree.query_pairs(max(h_a, h_r), output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d = pos[i] - pos[j]
    d -= np.array([width, height]) * np.round(d / np.array([width, height]))
    out = []
    for h in (h_a, h_r):
        g = kernel_gradient(KernelSpec(h), d)
        f = np.zeros_like(pos)
        np.add.at(f, i, g)
        np.add.at(f, j, -g)
        out.append(f)
    return out[0], out[1]


def pair_forces(positions, width, height, h_A, h_R):
    """Sums ``sum_j grad K(X_i - X_j)`` for both kernels.

    Cell-list loop under numba (a plain double loop when the cut-off spans
    the torus); a k-d tree pair query otherwise (memory
    grows with the number of interacting pairs, so keep it to small
    ensembles).
    """
    pos = np.ascontiguousarray(positions, dtype=float)
    if _accel.backend() == "numba":
        return _pair_forces_numba(pos, float(width), float(height), float(h_A), float(h_R),
                                  (C_K / h_A) ** 2, (C_K / h_R) ** 2)
    return _pair_forces_numpy(pos, width, height, h_A, h_R)


def particle_step(ensemble: ParticleEnsemble, params, dt: float, grad_s=None) -> ParticleEnsemble:
    """One Euler-Maruyama step.

    ``grad_s`` is an optional callable mapping positions ``(n, 2)`` to the
    gradient of the exogenous field; without it the topography term is
    skipped.  Growth terms (``alpha``, ``phi``) are not part of the agent
    dynamics and are ignored.
    """
    X = ensemble.positions
    n = ensemble.n
    drift = np.zeros_like(X)
    if params.gamma_A or params.gamma_R:
        fa, fr = pair_forces(X, ensemble.width, ensemble.height, params.h_A, params.h_R)
        drift -= ensemble.mass * (params.gamma_A * fa + params.gamma_R * fr) / n
    if params.gamma_S and grad_s is not None:
        drift -= params.gamma_S * np.asarray(grad_s(X))
    noise = ensemble.rng.standard_normal(X.shape) * np.sqrt(2.0 * params.gamma_D * dt)
    new = np.mod(X + drift * dt + noise, [ensemble.width, ensemble.height])
    return replace(ensemble, positions=new, t=ensemble.t + dt)


def simulate_particles(ensemble: ParticleEnsemble, params, t_end: float, dt: float, grad_s=None) -> ParticleEnsemble:
    steps = int(round((t_end - ensemble.t) / dt))
    for _ in range(steps):
        ensemble = particle_step(ensemble, params, dt, grad_s)
    return ensemble


def periodic_kde(positions, nx, ny, width=1.0, height=1.0, bandwidth=None) -> np.ndarray:
    """Gaussian kernel density of torus points, averaged over grid cells.

    Binning onto an ``nx x ny`` grid followed by FFT smoothing with a
    periodic Gaussian.  ``bandwidth`` defaults to Scott's rule
    ``sigma * n^(-1/6)``.  Returns the density per cell in x-major order,
    integrating to one.
    """
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    if bandwidth is None:
        sigma = np.sqrt(0.5 * (pos[:, 0].var() + pos[:, 1].var()))
        bandwidth = sigma * n ** (-1.0 / 6.0)
    H, _, _ = np.histogram2d(pos[:, 0], pos[:, 1], bins=(nx, ny), range=[[0, width], [0, height]])
    dx, dy = width / nx, height / ny
    kx = np.fft.fftfreq(nx, d=dx) * 2 * np.pi
    ky = np.fft.rfftfreq(ny, d=dy) * 2 * np.pi
    gauss = np.exp(-0.5 * bandwidth**2 * (kx[:, None] ** 2 + ky[None, :] ** 2))
    dens = np.fft.irfft2(np.fft.rfft2(H) * gauss, s=(nx, ny)) / (n * dx * dy)
    return np.clip(dens, 0.0, None).ravel()


def l1_distance(density_a, density_b, areas) -> float:
    return float(np.abs(np.asarray(density_a) - np.asarray(density_b)) @ np.asarray(areas))
