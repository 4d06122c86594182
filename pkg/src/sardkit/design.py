"""Regressors, time-discretization corrections and the structural back-solve.

The estimable model on a field ``y`` observed at ``0`` and ``tau`` is

    dy = a~ + phi~ y + sum_j gamma~_j x_j + sum_j rho~_j M_j dy + eps,

with ``dy = (y(tau) - y(0)) / tau`` and ``j`` ranging over the active
components ``S`` (exogenous field), ``A`` (aggregation), ``R`` (repulsion)
and ``D`` (diffusion).
"""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DegenerateAggregate, DimensionMismatch, ZeroPhiTilde
from .gfdm import OperatorSet
from .kernels import InteractionMatrix

COMPONENTS = ("S", "A", "R", "D")


def _matrix(W):
    return W.W if isinstance(W, InteractionMatrix) else W


def _check(n, *vectors):
    for v in vectors:
        if v is not None and np.shape(v) != (n,):
            raise DimensionMismatch(f"expected a length-{n} vector, got shape {np.shape(v)}")


def flux_divergence(ops: OperatorSet, y, u) -> np.ndarray:
    """Discrete ``div(y grad u)``: ``M_z1 (y * M_z1 u) + M_z2 (y * M_z2 u)``."""
    return ops.M_z1 @ (y * (ops.M_z1 @ u)) + ops.M_z2 @ (y * (ops.M_z2 @ u))


def build_regressors(y, s, ops: OperatorSet, W_A, W_R):
    """Return ``(x_S, x_A, x_R, x_D)``; ``x_S`` is zero when ``s`` is ``None``."""
    y = np.asarray(y, dtype=float)
    n = ops.n
    _check(n, y, s)
    if np.shape(W_A)[0] != n or np.shape(W_R)[0] != n:
        raise DimensionMismatch("interaction matrices do not match the operator size")
    x_S = np.zeros(n) if s is None else flux_divergence(ops, y, np.asarray(s, dtype=float))
    x_A = flux_divergence(ops, y, _matrix(W_A) @ y)
    x_R = flux_divergence(ops, y, _matrix(W_R) @ y)
    x_D = ops.laplacian @ y
    return x_S, x_A, x_R, x_D


def correction_map(kind: str, v, y, s, ops: OperatorSet, W=None) -> np.ndarray:
    """Evaluate a correction term on ``v`` without assembling its matrix.

    ``S``: ``div(v grad s)``; ``A``/``R``: ``div(v grad W y) + div(y grad W v)``;
    ``D``: ``lap(v)``.
    """
    v = np.asarray(v, dtype=float)
    if kind == "S":
        return flux_divergence(ops, v, np.asarray(s, dtype=float))
    if kind in ("A", "R"):
        Wm = _matrix(W)
        return flux_divergence(ops, v, Wm @ y) + flux_divergence(ops, y, Wm @ v)
    if kind == "D":
        return ops.laplacian @ v
    raise ValueError(f"unknown component {kind!r}")


def _interaction_correction(ops, y, W):
    Wm = _matrix(W)
    u = Wm @ y
    out = None
    for M in (ops.M_z1, ops.M_z2):
        first = M @ sparse.diags(M @ u)
        second = (M @ sparse.diags(y) @ M) @ Wm
        term = first + second
        out = term if out is None else out + term
    if sparse.issparse(out):
        return out.tocsr()
    return np.asarray(out)


def build_corrections(y, s, ops: OperatorSet, W_A, W_R) -> dict:
    """Matrices ``M_S, M_A, M_R, M_D`` with ``M_j v`` equal to :func:`correction_map`.

    Built in closed form from sparse products rather than column by column:
    ``M_A = sum_k M_k diag(M_k W_A y) + M_k diag(y) M_k W_A``.  The result is
    sparse when ``W`` is sparse and dense otherwise.  ``M_S`` is ``None``
    when ``s`` is ``None``.
    """
    y = np.asarray(y, dtype=float)
    _check(ops.n, y, s)
    out = {"S": None}
    if s is not None:
        s = np.asarray(s, dtype=float)
        out["S"] = sum(M @ sparse.diags(M @ s) for M in (ops.M_z1, ops.M_z2)).tocsr()
    out["A"] = _interaction_correction(ops, y, W_A)
    out["R"] = _interaction_correction(ops, y, W_R)
    out["D"] = ops.laplacian
    return out


@dataclass
class SardDesign:
    """Everything an estimator needs for one two-period cross-section.

    Attributes
    ----------
    y, dy : initial field and its time variation ``(y(tau) - y(0)) / tau``
    tau : period length
    x : dict component -> regressor vector
    M : dict component -> correction matrix
    components : active components, a subset of ``("S", "A", "R", "D")``
    areas : location areas, used for aggregates
    """

    y: np.ndarray
    dy: np.ndarray
    tau: float
    x: dict
    M: dict
    components: tuple
    areas: np.ndarray
    s: np.ndarray | None = None
    ids: tuple = ()
    _Mdy: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def exog_names(self) -> list:
        return ["alpha", "phi"] + [f"gamma_{j}" for j in self.components]

    def endog_names(self) -> list:
        return [f"rho_{j}" for j in self.components]

    def exog(self) -> np.ndarray:
        """``[1, y, x_j...]`` for the active components."""
        cols = [np.ones(self.n), self.y] + [self.x[j] for j in self.components]
        return np.column_stack(cols)

    def correction_columns(self, v=None) -> np.ndarray:
        """``[M_j v]`` for the active components (``v = dy`` by default, cached)."""
        if v is None:
            if not self._Mdy:
                self._Mdy.update({j: np.asarray(self.M[j] @ self.dy).ravel() for j in self.components})
            return np.column_stack([self._Mdy[j] for j in self.components])
        return np.column_stack([np.asarray(self.M[j] @ v).ravel() for j in self.components])

    def aggregates(self):
        """Area-weighted mean density at ``0`` and ``tau``."""
        total = self.areas.sum()
        Y0 = float(self.y @ self.areas) / total
        Yt = float((self.y + self.tau * self.dy) @ self.areas) / total
        return Y0, Yt

    def system_matrix(self, rho) -> sparse.spmatrix | np.ndarray:
        """``I - sum_j rho_j M_j``."""
        out = sparse.identity(self.n, format="csr")
        dense = None
        for r, j in zip(rho, self.components):
            M = self.M[j]
            if sparse.issparse(M):
                out = out - r * M
            else:
                dense = -r * M if dense is None else dense - r * M
        if dense is not None:
            return dense + out.toarray()
        return out.tocsr()

    def to_csv(self, path) -> None:
        ids = self.ids or tuple(str(i) for i in range(self.n))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "y0", "dy", "x_S", "x_A", "x_R", "x_D"])
            for i in range(self.n):
                w.writerow(
                    [ids[i]]
                    + [repr(float(v)) for v in (self.y[i], self.dy[i], self.x["S"][i], self.x["A"][i], self.x["R"][i], self.x["D"][i])]
                )


def make_design(y0, y_tau, tau, ops: OperatorSet, W_A, W_R, areas, s=None, ids=(), components=None) -> SardDesign:
    """Build regressors and corrections for a field observed at ``0`` and ``tau``.

    ``components`` defaults to ``("S", "A", "R", "D")`` when ``s`` is given
    and ``("A", "R", "D")`` otherwise.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    y0 = np.asarray(y0, dtype=float)
    y_tau = np.asarray(y_tau, dtype=float)
    _check(ops.n, y0, y_tau, areas)
    if components is None:
        components = COMPONENTS if s is not None else ("A", "R", "D")
    components = tuple(components)
    if "S" in components and s is None:
        raise ValueError("component S needs an exogenous field s")
    x_S, x_A, x_R, x_D = build_regressors(y0, s, ops, W_A, W_R)
    M = build_corrections(y0, s, ops, W_A, W_R)
    dy = (y_tau - y0) / tau
    return SardDesign(
        y=y0,
        dy=dy,
        tau=float(tau),
        x={"S": x_S, "A": x_A, "R": x_R, "D": x_D},
        M=M,
        components=components,
        areas=np.asarray(areas, dtype=float),
        s=None if s is None else np.asarray(s, dtype=float),
        ids=tuple(ids),
    )


@dataclass(frozen=True)
class StructuralParams:
    """Structural parameters recovered from reduced-form estimates."""

    alpha: float
    phi: float
    gamma: dict
    rho_phi: float
    rho: dict
    scale: float

    def as_dict(self) -> dict:
        out = {"alpha": self.alpha, "phi": self.phi, "rho_phi": self.rho_phi, "scale": self.scale}
        out.update({f"gamma_{k}": v for k, v in self.gamma.items()})
        out.update({f"rho_{k}": v for k, v in self.rho.items()})
        return out


def rho_phi_from_aggregates(alpha_t, phi_t, Y0, Yt, tau) -> float:
    """Growth-correction coefficient from the aggregate exponential law."""
    if phi_t == 0:
        raise ZeroPhiTilde("phi~ is zero; the aggregate law cannot be inverted")
    shift = alpha_t / phi_t
    num, den = Yt + shift, Y0 + shift
    if den == 0 or not num / den > 0:
        raise DegenerateAggregate(f"aggregates {Y0!r}, {Yt!r} with shift {shift!r} give a nonpositive log argument")
    return (2.0 / tau) * (1.0 - math.log(num / den) / (phi_t * tau))


def back_solve(tilde: Mapping, Y0: float, Yt: float, tau: float) -> StructuralParams:
    """Map reduced-form coefficients to structural ones.

    ``tilde`` holds ``alpha``, ``phi`` and any ``gamma_j`` / ``rho_j``.
    Structural values are ``tilde * scale`` with ``scale = 1 - tau*rho_phi/2``;
    correction coefficients become ``rho_j = 2*rho~_j*scale/tau``.
    """
    rho_phi = rho_phi_from_aggregates(tilde["alpha"], tilde["phi"], Y0, Yt, tau)
    scale = 1.0 - tau * rho_phi / 2.0
    gamma = {k[6:]: v * scale for k, v in tilde.items() if k.startswith("gamma_")}
    rho = {k[4:]: 2.0 * v * scale / tau for k, v in tilde.items() if k.startswith("rho_")}
    return StructuralParams(tilde["alpha"] * scale, tilde["phi"] * scale, gamma, rho_phi, rho, scale)


def to_tilde(params: StructuralParams) -> dict:
    """Inverse of :func:`back_solve` given the scale."""
    s = params.scale
    out = {"alpha": params.alpha / s, "phi": params.phi / s}
    out.update({f"gamma_{k}": v / s for k, v in params.gamma.items()})
    return out
