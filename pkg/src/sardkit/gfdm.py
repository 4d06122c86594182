"""Generalized finite-difference derivative operators on scattered locations.

Each location's star is fitted with a weighted second-order Taylor
expansion; the normal equations ``A d = B ybar`` give the five partials
``(d/dz1, d/dz2, d2/dz1^2, d2/dz2^2, d2/dz1dz2)`` as linear combinations of
the centre value and the star values.  Stacking the rows of ``D = A^-1 B``
yields sparse N x N operator matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import _accel
from .errors import OutOfRange, SingularStar
from .geometry import SpatialDomain, Star, StarSet

#: condition-number limit (of the scale-free normal matrix) for a usable star
COND_LIMIT = 1e12

#: default ratio between the weighting radius and the farthest star member
DM_SCALE = 1.2

ROWS = ("z1", "z2", "z1z1", "z2z2", "z1z2")


def weight(d, dm):
    """Quartic spline weight ``1 - 6r^2 + 8r^3 - 3r^4`` with ``r = d/dm``."""
    d = np.asarray(d, dtype=float)
    if not np.all(dm > 0):
        raise OutOfRange(f"dm must be positive, got {dm!r}")
    r = d / dm
    if np.any(r < 0) or np.any(r > 1 + 1e-12):
        raise OutOfRange("distance outside [0, dm]")
    r = np.clip(r, 0.0, 1.0)
    w = 1.0 - 6.0 * r**2 + 8.0 * r**3 - 3.0 * r**4
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class StarSystem:
    """Normal matrix ``A`` (5x5), right-hand side ``B`` (5 x n_s+1) and ``D = A^-1 B``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    weights: np.ndarray
    condition: float


@dataclass(frozen=True)
class OperatorSet:
    """Sparse GFDM derivative matrices on one domain."""

    M_z1: sparse.csr_matrix
    M_z2: sparse.csr_matrix
    M_z1z1: sparse.csr_matrix
    M_z2z2: sparse.csr_matrix
    M_z1z2: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.M_z1.shape[0]

    @property
    def laplacian(self) -> sparse.csr_matrix:
        return (self.M_z1z1 + self.M_z2z2).tocsr()

    def as_dict(self):
        return {
            "M_z1": self.M_z1,
            "M_z2": self.M_z2,
            "M_z1z1": self.M_z1z1,
            "M_z2z2": self.M_z2z2,
            "M_z1z2": self.M_z1z2,
        }


def _taylor_basis(offsets):
    # offsets are centre - member; the Taylor step is member - centre
    dx = -offsets[..., 0]
    dy = -offsets[..., 1]
    return np.stack([dx, dy, 0.5 * dx * dx, 0.5 * dy * dy, dx * dy], axis=-1)


@_accel.njit
def _moments_numba(offsets, w2, dm):
    n, ns, _ = offsets.shape
    A = np.zeros((n, 5, 5))
    B = np.zeros((n, 5, ns + 1))
    c = np.empty(5)
    for i in range(n):
        L = dm[i]
        for j in range(ns):
            dx = -offsets[i, j, 0] / L
            dy = -offsets[i, j, 1] / L
            c[0] = dx
            c[1] = dy
            c[2] = 0.5 * dx * dx
            c[3] = 0.5 * dy * dy
            c[4] = dx * dy
            wj = w2[i, j]
            for a in range(5):
                B[i, a, j + 1] = wj * c[a]
                B[i, a, 0] -= wj * c[a]
                for b in range(5):
                    A[i, a, b] += wj * c[a] * c[b]
    return A, B


def _moments_numpy(offsets, w2, dm):
    c = _taylor_basis(offsets / dm[:, None, None])
    wc = w2[..., None] * c
    A = np.einsum("nja,njb->nab", wc, c)
    B = np.empty((offsets.shape[0], 5, offsets.shape[1] + 1))
    B[:, :, 1:] = np.swapaxes(wc, 1, 2)
    B[:, :, 0] = -wc.sum(axis=1)
    return A, B


def star_moments(offsets, w2, dm):
    """Scale-free normal matrices and right-hand sides for stacked stars.

    Offsets are divided by each star's ``dm`` so the matrices are O(1).
    """
    offsets = np.ascontiguousarray(offsets, dtype=float)
    w2 = np.ascontiguousarray(w2, dtype=float)
    dm = np.ascontiguousarray(dm, dtype=float)
    if _accel.backend() == "numba":
        return _moments_numba(offsets, w2, dm)
    return _moments_numpy(offsets, w2, dm)


def _unscale(dm):
    # D = S D_s with S = diag(1/L, 1/L, 1/L^2, 1/L^2, 1/L^2)
    s = np.empty((dm.shape[0], 5))
    s[:, :2] = 1.0 / dm[:, None]
    s[:, 2:] = 1.0 / dm[:, None] ** 2
    return s


def _solve_stars(offsets, dm, dm_scale, centers):
    d = np.sqrt((offsets**2).sum(axis=2))
    w = weight(d, (dm_scale * dm)[:, None])
    w2 = w * w
    A_s, B_s = star_moments(offsets, w2, dm)
    cond = np.linalg.cond(A_s)
    bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise SingularStar(int(centers[k]), float(cond[k]))
    D_s = np.linalg.solve(A_s, B_s)
    s = _unscale(dm)
    D = s[:, :, None] * D_s
    # unscaled A and B for inspection: A = S^-1 A_s S^-1, B = S^-1 B_s
    return A_s, B_s, D, w, cond, s


def assemble_star(star: Star, dm_scale: float = DM_SCALE) -> StarSystem:
    """Weighted least-squares system of a single star.

    The weighting radius is ``dm_scale * star.dm``; with ``dm_scale = 1``
    the farthest member gets zero weight.

    Raises
    ------
    SingularStar
        If the star has fewer than five members or the normal matrix is
        numerically singular (e.g. collinear members).
    """
    offsets = np.asarray(star.offsets, dtype=float)[None]
    if offsets.shape[1] < 5:
        raise SingularStar(star.center, np.inf)
    dm = np.array([star.dm])
    A_s, B_s, D, w, cond, s = _solve_stars(offsets, dm, dm_scale, [star.center])
    inv_s = 1.0 / s[0]
    A = inv_s[:, None] * A_s[0] * inv_s[None, :]
    B = inv_s[:, None] * B_s[0]
    return StarSystem(A, B, D[0], w[0], float(cond[0]))


def build_operators(domain: SpatialDomain, stars: StarSet, dm_scale: float = DM_SCALE) -> OperatorSet:
    """Stack per-star derivative rows into sparse ``N x N`` matrices."""
    n, ns = stars.members.shape
    if ns < 5:
        raise SingularStar(0, np.inf)
    _, _, D, _, _, _ = _solve_stars(stars.offsets, stars.dm, dm_scale, np.arange(n))
    rows = np.repeat(np.arange(n), ns + 1)
    cols = np.concatenate([np.arange(n)[:, None], stars.members], axis=1).ravel()
    mats = []
    for r in range(5):
        m = sparse.csr_matrix((D[:, r, :].ravel(), (rows, cols)), shape=(n, n))
        m.sum_duplicates()
        mats.append(m)
    return OperatorSet(*mats)


def dump_coo(matrix, path) -> None:
    """Write a sparse matrix as ``row,col,value`` lines."""
    coo = sparse.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r},{c},{v:.17g}\n")
