"""OLS, IV and maximum-likelihood estimation of the growth regression.

All estimators work on a :class:`~sardkit.design.SardDesign`.  The exogenous
block is ``X = [1, y, x_j...]`` and the endogenous block ``[M_j dy]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import optimize, sparse, stats
from scipy.sparse import linalg as spla

from .design import SardDesign, back_solve
from .diagnostics import aicc
from .errors import (
    LambdaOutOfRange,
    NonConvergence,
    RankDeficientDesign,
    WeakInstrumentsWarning,
)
from .geometry import ContiguityStructure

#: above this size log-determinants use sparse LU instead of dense algebra
DENSE_LIMIT = 3000


@dataclass
class SardFit:
    """Result of one estimation.

    ``residuals`` are ``dy - X beta - sum_j rho_j M_j dy`` (the spatially
    correlated error); for ML ``innovations`` holds the filtered
    ``(I - lam W_eps) residuals``.
    """

    method: str
    names: list
    coef: np.ndarray
    cov: np.ndarray
    sigma2: float
    loglik: float
    residuals: np.ndarray
    n: int
    k: int
    lam: float = 0.0
    se_robust: np.ndarray | None = None
    innovations: np.ndarray | None = None
    first_stage_F: dict | None = None
    history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    @property
    def aicc(self) -> float:
        return aicc(self.loglik, self.k, self.n)

    @property
    def mse(self) -> float:
        return float(np.mean(self.residuals**2))

    def tilde(self) -> dict:
        return dict(zip(self.names, self.coef))

    def structural(self, design: SardDesign):
        Y0, Yt = design.aggregates()
        return back_solve(self.tilde(), Y0, Yt, design.tau)

    def summary_dict(self) -> dict:
        out = {"method": self.method, "n": self.n, "k": self.k, "loglik": self.loglik,
               "aicc": self.aicc, "mse": self.mse, "sigma2": self.sigma2, "lambda": self.lam}
        for name, b, s in zip(self.names, self.coef, self.se):
            out[name] = b
            out[f"se_{name}"] = s
        return out


def _gaussian_loglik(rss, n, logdet=0.0):
    s2 = rss / n
    return logdet - 0.5 * n * (math.log(2 * math.pi * s2) + 1.0)


def _check_rank(X, names=None):
    r = np.linalg.matrix_rank(X / np.maximum(np.linalg.norm(X, axis=0), 1e-300))
    if r < X.shape[1]:
        raise RankDeficientDesign(f"design has rank {r} < {X.shape[1]} columns" + (f" ({names})" if names else ""))


def _regressors(design: SardDesign, naive: bool):
    X = design.exog()
    names = design.exog_names()
    if not naive:
        X = np.column_stack([X, design.correction_columns()])
        names = names + design.endog_names()
    return X, names


def ols(X, y):
    """Least squares with classical and HC1 covariances."""
    n, p = X.shape
    _check_rank(X)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    e = y - X @ beta
    rss = float(e @ e)
    XtX_inv = np.linalg.inv(X.T @ X)
    cov = rss / max(n - p, 1) * XtX_inv
    meat = (X * (e**2)[:, None]).T @ X
    hc = n / max(n - p, 1) * XtX_inv @ meat @ XtX_inv
    return beta, e, rss, cov, hc


def fit_ols(design: SardDesign, naive: bool = False) -> SardFit:
    """OLS of ``dy`` on the exogenous block, plus ``[M_j dy]`` unless ``naive``."""
    X, names = _regressors(design, naive)
    beta, e, rss, cov, hc = ols(X, design.dy)
    n, p = X.shape
    return SardFit(
        method="OLS-NAIVE" if naive else "OLS",
        names=names,
        coef=beta,
        cov=cov,
        sigma2=rss / n,
        loglik=_gaussian_loglik(rss, n),
        residuals=e,
        n=n,
        k=p + 1,
        se_robust=np.sqrt(np.diag(hc)),
    )


def _independent_columns(Z, tol=1e-10):
    norms = np.linalg.norm(Z, axis=0)
    keep = norms > tol * max(norms.max(initial=0.0), 1e-300)
    Z = Z[:, keep] / norms[keep]
    _, R, piv = sla.qr(Z, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int((d > tol * d[0]).sum()) if d.size else 0
    return np.sort(piv[:rank]), np.flatnonzero(keep)


def instruments(design: SardDesign) -> np.ndarray:
    """``[X, M_j^2 X ...]`` with zero and collinear columns removed."""
    X = design.exog()
    blocks = [X]
    for j in design.components:
        M = design.M[j]
        blocks.append(np.asarray(M @ (M @ X)))
    Z = np.column_stack(blocks)
    cols, kept = _independent_columns(Z)
    return Z[:, kept][:, cols]


def fit_iv(design: SardDesign, instruments_override=None) -> SardFit:
    """Two-stage least squares with ``[M_j dy]`` instrumented.

    Warns :class:`WeakInstrumentsWarning` when a first-stage F is below 10.
    """
    X = design.exog()
    E = design.correction_columns()
    Xf = np.column_stack([X, E])
    names = design.exog_names() + design.endog_names()
    Z = instruments(design) if instruments_override is None else np.asarray(instruments_override, dtype=float)
    n, p = Xf.shape
    if Z.shape[1] < p:
        raise RankDeficientDesign(f"{Z.shape[1]} instruments for {p} regressors")
    _check_rank(Z)
    Q, _ = np.linalg.qr(Z)
    Xhat = Q @ (Q.T @ Xf)
    _check_rank(Xhat, names)
    beta = np.linalg.solve(Xhat.T @ Xf, Xhat.T @ design.dy)
    e = design.dy - Xf @ beta
    rss = float(e @ e)
    cov = rss / max(n - p, 1) * np.linalg.inv(Xhat.T @ Xhat)

    # first-stage F of the excluded instruments, per endogenous column
    F = {}
    qx, _ = np.linalg.qr(X)
    q_excl = Z.shape[1] - X.shape[1]
    for name, col in zip(design.endog_names(), E.T):
        r_u = col - Q @ (Q.T @ col)
        r_r = col - qx @ (qx.T @ col)
        rss_u, rss_r = float(r_u @ r_u), float(r_r @ r_r)
        if q_excl <= 0 or rss_u <= 0:
            F[name] = math.inf
        else:
            F[name] = ((rss_r - rss_u) / q_excl) / (rss_u / max(n - Z.shape[1], 1))
    weak = [k for k, v in F.items() if v < 10]
    if weak:
        warnings.warn(f"weak instruments (first-stage F < 10) for {weak}", WeakInstrumentsWarning, stacklevel=2)
    return SardFit(
        method="IV",
        names=names,
        coef=beta,
        cov=cov,
        sigma2=rss / n,
        loglik=_gaussian_loglik(rss, n),
        residuals=e,
        n=n,
        k=p + 1,
        first_stage_F=F,
    )


# --- spatial error weights -------------------------------------------------

@dataclass
class ErrorWeights:
    """``W_eps = sum_{q <= Q_hat} ell_q * band_q`` with the regression behind it."""

    W: sparse.csr_matrix
    ell: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    Q_hat: int

    @property
    def empty(self) -> bool:
        return self.Q_hat == 0

    def lambda_bounds(self):
        """Open interval of ``lam`` keeping ``I - lam W`` nonsingular."""
        w = _eigenvalues(self.W)
        lo = 1.0 / w.min() if w.min() < 0 else -np.inf
        hi = 1.0 / w.max() if w.max() > 0 else np.inf
        return lo, hi


def sparse_logdet(A) -> float:
    """``log |det A|`` from a sparse LU factorization.

    The minimum-degree ordering of ``A + A^T`` with diagonal pivoting suits
    the near-symmetric, diagonally dominant ``I - sum rho_j M_j`` and cuts
    fill-in by about a third relative to the default column ordering.
    """
    lu = spla.splu(sparse.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
    return float(np.log(np.abs(lu.U.diagonal())).sum())


def _eigenvalues(W):
    if W.shape[0] <= DENSE_LIMIT:
        return np.linalg.eigvalsh(W.toarray())
    lo = spla.eigsh(W, k=1, which="SA", return_eigenvectors=False)[0]
    hi = spla.eigsh(W, k=1, which="LA", return_eigenvectors=False)[0]
    return np.array([lo, hi])


def estimate_error_weights(residuals, contiguity: ContiguityStructure, Q: int = 10, level: float = 0.05) -> ErrorWeights:
    """Regress residuals on their contiguity-ring lags and keep the significant prefix.

    The retained order ``Q_hat`` is the length of the leading run of
    coefficients significant at ``level`` (two-sided t-test).
    """
    e = np.asarray(residuals, dtype=float)
    if Q < 1:
        raise ValueError("Q must be >= 1")
    bands = [contiguity.band(q) for q in range(1, Q + 1)]
    for q, b in enumerate(bands, 1):
        if b.nnz == 0:
            raise RankDeficientDesign(f"contiguity band of order {q} is empty")
    L = np.column_stack([b @ e for b in bands])
    n = e.shape[0]
    _check_rank(L)
    ell, *_ = np.linalg.lstsq(L, e, rcond=None)
    u = e - L @ ell
    s2 = float(u @ u) / max(n - Q, 1)
    se = np.sqrt(np.diag(s2 * np.linalg.inv(L.T @ L)))
    t = ell / se
    p = 2 * stats.t.sf(np.abs(t), max(n - Q, 1))
    sig = p < level
    Q_hat = int(np.argmin(sig)) if not sig.all() else Q
    W = sparse.csr_matrix((n, n))
    for q in range(Q_hat):
        W = W + ell[q] * bands[q]
    return ErrorWeights(W.tocsr(), ell, se, t, p, Q_hat)


# --- maximum likelihood ----------------------------------------------------

class _Profile:
    """Concentrated log-likelihood over ``theta = (rho_1..rho_m[, lam])``."""

    def __init__(self, design: SardDesign, W_eps):
        self.design = design
        self.X = design.exog()
        self.E = design.correction_columns()
        self.dy = design.dy
        self.n = design.n
        self.Ms = [design.M[j] for j in design.components]
        self.m = len(self.Ms)
        self.W = W_eps
        self.dense = self.n <= DENSE_LIMIT
        if self.W is not None:
            if self.dense:
                self.omega = np.linalg.eigvalsh(self.W.toarray())
            else:
                self.omega = None
        if self.dense:
            self.Md = [M.toarray() if sparse.issparse(M) else np.asarray(M) for M in self.Ms]

    def lam_bounds(self):
        if self.W is None:
            return (0.0, 0.0)
        w = self.omega if self.omega is not None else _eigenvalues(self.W)
        lo = 1.0 / w.min() if w.min() < 0 else -np.inf
        hi = 1.0 / w.max() if w.max() > 0 else np.inf
        return lo, hi

    def _A(self, rho):
        if self.dense:
            A = np.eye(self.n)
            for r, M in zip(rho, self.Md):
                A -= r * M
            return A
        return self.design.system_matrix(rho).tocsc()

    def _logdet_B(self, lam):
        if self.W is None or lam == 0:
            return 0.0, 0.0
        if self.omega is not None:
            d = 1.0 - lam * self.omega
            if np.any(d <= 0):
                return -np.inf, 0.0
            return float(np.log(d).sum()), float(-(self.omega / d).sum())
        return sparse_logdet(sparse.identity(self.n) - lam * self.W), np.nan

    def _filter(self, lam, v):
        if self.W is None or lam == 0:
            return v
        return v - lam * (self.W @ v)

    def concentrated(self, theta):
        rho, lam = theta[: self.m], (theta[self.m] if self.W is not None else 0.0)
        Ady = self.dy - self.E @ rho
        BX = self._filter(lam, self.X)
        By = self._filter(lam, Ady)
        beta, *_ = np.linalg.lstsq(BX, By, rcond=None)
        eps = Ady - self.X @ beta
        eta = By - BX @ beta
        return rho, lam, beta, eps, eta

    def value_and_grad(self, theta, need_grad=True):
        rho, lam, beta, eps, eta = self.concentrated(theta)
        n = self.n
        rss = float(eta @ eta)
        A = self._A(rho)
        grad = np.zeros_like(theta)
        if self.dense:
            lu, piv = sla.lu_factor(A, check_finite=False)
            d = np.diag(lu)
            if np.any(d == 0):
                return -np.inf, grad, None
            logdet_A = float(np.log(np.abs(d)).sum())
            if need_grad:
                Ainv = sla.lu_solve((lu, piv), np.eye(n), check_finite=False)
                for j, M in enumerate(self.Md):
                    grad[j] = -float(np.sum(Ainv.T * M))
        else:
            try:
                logdet_A = sparse_logdet(A)
            except RuntimeError:
                return -np.inf, grad, None
            need_grad = False
        logdet_B, dlogdet_B = self._logdet_B(lam)
        if not np.isfinite(logdet_B):
            return -np.inf, grad, None
        ll = _gaussian_loglik(rss, n, logdet_A + logdet_B)
        if need_grad:
            # envelope theorem: beta is at its optimum for fixed theta
            c = -n / rss
            for j in range(self.m):
                deta = -self._filter(lam, self.E[:, j])
                grad[j] += c * float(eta @ deta)
            if self.W is not None:
                deta = -(self.W @ eps)
                grad[self.m] = dlogdet_B + c * float(eta @ deta)
        return ll, grad, (rho, lam, beta, eps, eta, rss)


def fit_ml(
    design: SardDesign,
    W_eps: ErrorWeights | None = None,
    start: SardFit | None = None,
    maxiter: int = 200,
    hessian: bool = True,
) -> SardFit:
    """Gaussian ML of ``(I - sum rho_j M_j) dy = X beta + eps``, ``eps = lam W eps + eta``.

    ``beta`` and ``sigma^2`` are concentrated out; ``(rho, lam)`` are found by
    L-BFGS-B from ``start`` (IV by default, OLS if IV is rank deficient).

    Raises
    ------
    NonConvergence
        When the optimizer stops without converging; the partial fit is in
        ``exc.diagnostics``.
    LambdaOutOfRange
        When the starting ``lam`` is outside the admissible interval.
    """
    W = None if (W_eps is None or W_eps.empty) else W_eps.W
    prof = _Profile(design, W)
    m = prof.m
    if start is None:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", WeakInstrumentsWarning)
                start = fit_iv(design)
        except RankDeficientDesign:
            start = fit_ols(design)
    rho0 = np.array([start.tilde().get(f"rho_{j}", 0.0) for j in design.components])
    lo, hi = prof.lam_bounds()
    lam0 = 0.0
    if W is not None and not lo < lam0 < hi:
        raise LambdaOutOfRange(f"lam={lam0} outside ({lo}, {hi})")

    # optimize in units where each parameter moves the model by O(1)
    scales = np.array([1.0 / max(abs(M).max() if not sparse.issparse(M) else abs(M).max(), 1e-300) for M in prof.Ms])
    if W is not None:
        scales = np.append(scales, 1.0)
        margin = 1e-6
        bounds = [(None, None)] * m + [(lo + margin * abs(lo) if np.isfinite(lo) else None,
                                        hi - margin * abs(hi) if np.isfinite(hi) else None)]
        x0 = np.append(rho0, lam0) / scales
    else:
        bounds = [(None, None)] * m
        x0 = rho0 / scales

    # a start with a singular system matrix is pulled toward zero
    ll0, _, _ = prof.value_and_grad(x0 * scales, need_grad=False)
    shrink = 0
    while not np.isfinite(ll0) and shrink < 30:
        x0 = x0 * 0.5
        shrink += 1
        ll0, _, _ = prof.value_and_grad(x0 * scales, need_grad=False)

    history = []
    use_grad = prof.dense

    def fun(u):
        ll, g, _ = prof.value_and_grad(u * scales, need_grad=use_grad)
        if not np.isfinite(ll):
            return 1e300, np.zeros_like(u)
        return -ll, -g * scales

    def fun_nograd(u):
        ll, _, _ = prof.value_and_grad(u * scales, need_grad=False)
        return -ll if np.isfinite(ll) else 1e300

    def callback(u):
        history.append(float(fun_nograd(u)))

    history.append(float(fun_nograd(x0)))
    if use_grad:
        res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
                                options={"maxiter": maxiter, "ftol": 1e-13, "gtol": 1e-7})
    else:
        res = optimize.minimize(fun_nograd, x0, method="L-BFGS-B", bounds=bounds, callback=callback,
                                options={"maxiter": maxiter, "ftol": 1e-13, "gtol": 1e-7})
    theta = res.x * scales
    ll, _, parts = prof.value_and_grad(theta, need_grad=False)
    rho, lam, beta, eps, eta, rss = parts
    n = design.n
    names = design.exog_names() + design.endog_names()
    coef = np.concatenate([beta, rho])
    sigma2 = rss / n

    cov = np.full((len(coef), len(coef)), np.nan)
    BX = prof._filter(lam, prof.X)
    cov_beta = sigma2 * np.linalg.inv(BX.T @ BX)
    cov[: len(beta), : len(beta)] = cov_beta
    cov_theta = None
    if hessian:
        cov_theta = _profile_covariance(prof, theta)
        if cov_theta is not None:
            cov[len(beta):, len(beta):] = cov_theta[:m, :m]

    k = len(coef) + 1 + (1 if W is not None else 0)
    diag = {"message": str(res.message), "nit": int(res.nit), "success": bool(res.success),
            "lam_bounds": (lo, hi), "start_shrink": shrink}
    if cov_theta is not None and W is not None:
        diag["se_lambda"] = float(np.sqrt(max(cov_theta[m, m], 0.0)))
    fit = SardFit(
        method="ML",
        names=names,
        coef=coef,
        cov=cov,
        sigma2=sigma2,
        loglik=ll,
        residuals=eps,
        n=n,
        k=k,
        lam=float(lam),
        innovations=eta,
        history=history,
        diagnostics=diag,
    )
    if not res.success and "ABNORMAL" not in str(res.message):
        raise NonConvergence(f"ML optimizer stopped: {res.message}", diagnostics=fit)
    return fit


def _profile_covariance(prof: _Profile, theta):
    """Inverse negative Hessian of the profile log-likelihood (central differences)."""
    k = theta.size
    if not prof.dense:
        return None
    h = np.maximum(np.abs(theta), 1e-8) * 1e-4
    g = np.zeros((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = h[i]
        _, gp, _ = prof.value_and_grad(theta + e)
        _, gm, _ = prof.value_and_grad(theta - e)
        g[i] = (gp - gm) / (2 * h[i])
    H = 0.5 * (g + g.T)
    try:
        return np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        return None


# --- bootstrap -------------------------------------------------------------

def bootstrap(design: SardDesign, method: str = "OLS", reps: int = 500, seed: int = 0) -> np.ndarray:
    """Residual-resampling bootstrap standard errors for ``OLS-NAIVE``, ``OLS`` or ``IV``.

    Each draw regenerates ``dy* = A(rho)^-1 (X beta + e*)`` from the fitted
    model with centred residuals resampled with replacement, rebuilds the
    ``M_j dy*`` columns and refits.
    """
    fitters = {"OLS-NAIVE": lambda d: fit_ols(d, naive=True), "OLS": fit_ols, "IV": fit_iv}
    if method not in fitters:
        raise ValueError(f"bootstrap supports {sorted(fitters)}, got {method!r}")
    fitter = fitters[method]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakInstrumentsWarning)
        base = fitter(design)
    X = design.exog()
    p = X.shape[1]
    beta = base.coef[:p]
    rho = base.coef[p:]
    e = base.residuals - base.residuals.mean()
    rng = np.random.default_rng(seed)
    if rho.size:
        A = design.system_matrix(rho)
        solve = (sla.lu_factor(A), True) if not sparse.issparse(A) else (spla.splu(A.tocsc()), False)
    draws = np.empty((reps, base.coef.size))
    for b in range(reps):
        rhs = X @ beta + e[rng.integers(0, e.size, e.size)]
        if rho.size:
            f, dense = solve
            dy = sla.lu_solve(f, rhs) if dense else f.solve(rhs)
        else:
            dy = rhs
        d = _with_dy(design, dy)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WeakInstrumentsWarning)
            draws[b] = fitter(d).coef
    return draws.std(axis=0, ddof=1)


def _with_dy(design: SardDesign, dy) -> SardDesign:
    return SardDesign(design.y, np.asarray(dy, dtype=float), design.tau, design.x, design.M,
                      design.components, design.areas, design.s, design.ids)
