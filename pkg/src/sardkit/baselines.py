"""Conventional spatial-econometric comparison models.

All models regress the period growth ``dy`` on the initial level ``y`` and
optional exogenous covariates:

===============  ==========================================================
INCOME-LAG       ``dy = a + phi y``
ALT-INCOME-LAG   ``dy = a + phi y + g_alt alt``
S-INCOME-LAG     ``dy = a + phi y + g_S x_S``
SLX              ``dy = a + phi y + g_alt alt + theta W y + theta_alt W alt``
SPATIAL-LAG      ``dy = rho W dy + a + phi y + g_alt alt``
SPATIAL-DURBIN   ``dy = rho W dy + a + phi y + g_alt alt + theta W y + theta_alt W alt``
===============  ==========================================================

``W`` is the row-standardized inverse-squared-distance matrix truncated at
a threshold ``d_bar``; the threshold is chosen on a grid by lowest AICc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .diagnostics import aicc
from .errors import RankDeficientDesign
from .estimators import DENSE_LIMIT, ols, sparse_logdet
from .geometry import SpatialDomain

MODELS = ("INCOME-LAG", "ALT-INCOME-LAG", "S-INCOME-LAG", "SLX", "SPATIAL-LAG", "SPATIAL-DURBIN")
_SPATIAL = ("SLX", "SPATIAL-LAG", "SPATIAL-DURBIN")
_LAGGED = ("SPATIAL-LAG", "SPATIAL-DURBIN")


@dataclass
class BaselineFit:
    model: str
    names: list
    coef: np.ndarray
    se: np.ndarray
    sigma2: float
    loglik: float
    residuals: np.ndarray
    n: int
    k: int
    d_bar: float | None = None
    grid: dict = field(default_factory=dict)

    @property
    def aicc(self) -> float:
        return aicc(self.loglik, self.k, self.n)

    @property
    def mse(self) -> float:
        return float(np.mean(self.residuals**2))

    def params(self) -> dict:
        return dict(zip(self.names, self.coef))


def _inverse_square(domain: SpatialDomain, d_bar: float) -> sparse.csr_matrix:
    D = domain.distances_within(d_bar).tocoo()
    off = D.row != D.col
    r, c, d = D.row[off], D.col[off], D.data[off]
    return sparse.csr_matrix((1.0 / d**2, (r, c)), shape=(domain.n, domain.n))


def _standardize(S):
    rs = np.asarray(S.sum(axis=1)).ravel()
    inv = np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0)
    return (sparse.diags(inv) @ S).tocsr(), rs


def inverse_square_weights(domain: SpatialDomain, d_bar: float) -> sparse.csr_matrix:
    """Row-standardized ``1/d^2`` weights for pairs closer than ``d_bar``; zero diagonal."""
    return _standardize(_inverse_square(domain, d_bar))[0]


def _lag_spectrum(S, rowsum) -> np.ndarray:
    """Eigenvalues of ``D^-1 S`` for symmetric ``S``, via the similar ``D^-1/2 S D^-1/2``."""
    h = np.divide(1.0, np.sqrt(rowsum), out=np.zeros_like(rowsum), where=rowsum > 0)
    sym = (sparse.diags(h) @ S @ sparse.diags(h)).toarray()
    return np.linalg.eigvalsh(0.5 * (sym + sym.T))


class _LagLikelihood:
    """Concentrated log-likelihood of ``(I - rho W) dy = X beta + eta``."""

    def __init__(self, S, X, dy):
        self.W, rowsum = _standardize(S)
        self.X, self.dy = X, dy
        self.n = dy.size
        self.Wdy = self.W @ dy
        self.omega = _lag_spectrum(S, rowsum) if self.n <= DENSE_LIMIT else None

    def bounds(self):
        if self.omega is not None:
            lo = 1.0 / self.omega.min() if self.omega.min() < 0 else -1.0
            hi = 1.0 / self.omega.max() if self.omega.max() > 0 else 1.0
            return lo, hi
        return -1.0, 1.0

    def logdet(self, rho):
        if self.omega is not None:
            d = 1.0 - rho * self.omega
            return float(np.log(d).sum()) if np.all(d > 0) else -np.inf
        try:
            return sparse_logdet(sparse.identity(self.n) - rho * self.W)
        except RuntimeError:
            return -np.inf

    def __call__(self, rho):
        z = self.dy - rho * self.Wdy
        beta, *_ = np.linalg.lstsq(self.X, z, rcond=None)
        e = z - self.X @ beta
        rss = float(e @ e)
        ll = self.logdet(rho) - 0.5 * self.n * (math.log(2 * math.pi * rss / self.n) + 1.0)
        return ll, beta, e, rss


def _exog(model, y, alt, x_S, W):
    cols = [np.ones_like(y), y]
    names = ["alpha", "phi"]
    if model == "S-INCOME-LAG":
        if x_S is None:
            raise ValueError("S-INCOME-LAG needs x_S")
        cols.append(x_S)
        names.append("gamma_S")
    if model in ("ALT-INCOME-LAG",) + _SPATIAL and alt is not None:
        cols.append(alt)
        names.append("gamma_ALT")
    if model in ("SLX", "SPATIAL-DURBIN"):
        cols.append(W @ y)
        names.append("theta")
        if alt is not None:
            cols.append(W @ alt)
            names.append("theta_ALT")
    if model == "ALT-INCOME-LAG" and alt is None:
        raise ValueError("ALT-INCOME-LAG needs an altimetry field")
    return np.column_stack(cols), names


def _fit_once(model, y, dy, alt, x_S, S):
    W = None if S is None else _standardize(S)[0]
    X, names = _exog(model, y, alt, x_S, W)
    n = y.size
    if model not in _LAGGED:
        beta, e, rss, cov, _ = ols(X, dy)
        ll = -0.5 * n * (math.log(2 * math.pi * rss / n) + 1.0)
        return BaselineFit(model, names, beta, np.sqrt(np.diag(cov)), rss / n, ll, e, n, X.shape[1] + 1)
    rank = np.linalg.matrix_rank(X / np.maximum(np.linalg.norm(X, axis=0), 1e-300))
    if rank < X.shape[1]:
        raise RankDeficientDesign(f"{model}: design has rank {rank} < {X.shape[1]}")
    lik = _LagLikelihood(S, X, dy)
    lo, hi = lik.bounds()
    eps = 1e-6
    res = optimize.minimize_scalar(lambda r: -lik(r)[0], bounds=(lo + eps * abs(lo), hi - eps * abs(hi)),
                                   method="bounded", options={"xatol": 1e-10})
    rho = float(res.x)
    ll, beta, e, rss = lik(rho)
    sigma2 = rss / n
    h = 1e-5 * max(abs(rho), 1e-2)
    curv = (lik(rho + h)[0] - 2 * ll + lik(rho - h)[0]) / h**2
    se_rho = math.sqrt(-1.0 / curv) if curv < 0 else math.nan
    se_beta = np.sqrt(np.diag(sigma2 * np.linalg.inv(X.T @ X)))
    return BaselineFit(model, names + ["rho"], np.append(beta, rho), np.append(se_beta, se_rho),
                       sigma2, ll, e, n, X.shape[1] + 2)


def fit_baseline(model: str, y0, dy, domain: SpatialDomain | None = None, alt=None, x_S=None,
                 d_bar_grid=()) -> BaselineFit:
    """Fit one comparison model; spatial models scan ``d_bar_grid`` and keep the lowest AICc.

    Parameters
    ----------
    model : one of :data:`MODELS`
    y0, dy : initial level and period growth, per location
    domain : locations (needed by the spatial models)
    alt : optional altimetry covariate
    x_S : topography regressor, for ``S-INCOME-LAG``
    d_bar_grid : candidate distance thresholds for ``W``

    Returns
    -------
    BaselineFit
        ``grid`` maps each threshold tried to its AICc (``inf`` when ``W``
        is empty or the fit fails).
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {MODELS}")
    y0 = np.asarray(y0, dtype=float)
    dy = np.asarray(dy, dtype=float)
    alt = None if alt is None else np.asarray(alt, dtype=float)
    x_S = None if x_S is None else np.asarray(x_S, dtype=float)
    if model not in _SPATIAL:
        return _fit_once(model, y0, dy, alt, x_S, None)
    if domain is None or not len(d_bar_grid):
        raise ValueError(f"{model} needs a domain and a nonempty d_bar grid")
    best, table = None, {}
    for d_bar in d_bar_grid:
        S = _inverse_square(domain, float(d_bar))
        if S.nnz == 0:
            table[float(d_bar)] = math.inf
            continue
        try:
            fit = _fit_once(model, y0, dy, alt, x_S, S)
        except RankDeficientDesign:
            table[float(d_bar)] = math.inf
            continue
        fit.d_bar = float(d_bar)
        table[float(d_bar)] = fit.aicc
        if best is None or fit.aicc < best.aicc:
            best = fit
    if best is None:
        raise RankDeficientDesign(f"{model}: no threshold in the grid gave a usable weight matrix")
    best.grid = table
    return best
