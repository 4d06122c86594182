"""Fit statistics, Moran's I correlograms and Monte Carlo summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats

from .errors import EmptyBand


def aicc(loglik: float, k: int, n: int) -> float:
    """Corrected Akaike criterion ``-2 logL + 2k + 2k(k+1)/(n-k-1)``."""
    if n - k - 1 <= 0:
        return math.inf
    return -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1) / (n - k - 1)


def mse(residuals) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.mean(r * r))


def nagelkerke(loglik: float, loglik_null: float, n: int) -> float:
    """Nagelkerke pseudo-R^2 against a null (intercept-only) log-likelihood."""
    cox_snell = 1.0 - math.exp(2.0 * (loglik_null - loglik) / n)
    ceiling = 1.0 - math.exp(2.0 * loglik_null / n)
    return cox_snell / ceiling


def intercept_only_loglik(dy) -> float:
    dy = np.asarray(dy, dtype=float)
    n = dy.size
    s2 = float(np.mean((dy - dy.mean()) ** 2))
    return -0.5 * n * (math.log(2 * math.pi * s2) + 1.0)


@dataclass(frozen=True)
class MoranResult:
    I: float
    expectation: float
    variance: float
    permuted: np.ndarray | None = None

    @property
    def z(self) -> float:
        return (self.I - self.expectation) / math.sqrt(self.variance)

    def band(self, level=0.95):
        """Null interval: permutation quantiles when available, else normal."""
        if self.permuted is not None:
            lo, hi = np.quantile(self.permuted, [0.5 - level / 2, 0.5 + level / 2])
            return float(lo), float(hi)
        half = stats.norm.ppf(0.5 + level / 2) * math.sqrt(self.variance)
        return self.expectation - half, self.expectation + half


def morans_i(field, band, permutations: int = 0, seed: int = 0) -> MoranResult:
    """Moran's I with row-standardized weights and normal-approximation moments.

    Rows of ``band`` with no neighbours get zero weight.  With
    ``permutations > 0`` the statistic is also evaluated on that many
    seeded random relabelings of the field, and :meth:`MoranResult.band`
    switches to their quantiles.  Raises
    :class:`EmptyBand` for an empty band and ``ValueError`` for a constant
    field (the statistic is undefined).
    """
    x = np.asarray(field, dtype=float)
    W = sparse.csr_matrix(band, dtype=float)
    if W.nnz == 0:
        raise EmptyBand("Moran's I needs a nonempty weight band")
    z = x - x.mean()
    m2 = float(z @ z)
    if m2 <= 1e-300 * max(1.0, float(x @ x)):
        raise ValueError("Moran's I is undefined for a constant field")
    rs = np.asarray(W.sum(axis=1)).ravel()
    inv = np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0)
    W = sparse.diags(inv) @ W
    n = x.size
    S0 = float(W.sum())
    I = (n / S0) * float(z @ (W @ z)) / m2
    E = -1.0 / (n - 1)
    Wt = W + W.T
    S1 = 0.5 * float(Wt.multiply(Wt).sum())
    S2 = float(((np.asarray(W.sum(axis=1)).ravel() + np.asarray(W.sum(axis=0)).ravel()) ** 2).sum())
    var = (n * n * S1 - n * S2 + 3 * S0 * S0) / ((n * n - 1) * S0 * S0) - E * E
    perm = None
    if permutations > 0:
        rng = np.random.default_rng(seed)
        Z = np.column_stack([rng.permutation(z) for _ in range(permutations)])
        perm = (n / S0) * np.einsum("ij,ij->j", Z, W @ Z) / m2
    return MoranResult(I, E, var, perm)


@dataclass
class Correlogram:
    """Per-order Moran's I; orders with an empty band hold ``nan``."""

    orders: np.ndarray
    I: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    expectation: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["order", "I", "lo", "hi"])
            for row in zip(self.orders, self.I, self.lo, self.hi):
                w.writerow([int(row[0])] + ["" if not np.isfinite(v) else repr(float(v)) for v in row[1:]])


def correlogram(field, contiguity, max_order=None, level=0.95, permutations=0, seed=0) -> Correlogram:
    """Moran's I on the exclusive contiguity rings ``1..max_order``.

    ``permutations > 0`` gives permutation bands instead of normal ones.
    """
    Q = contiguity.max_order if max_order is None else max_order
    orders = np.arange(1, Q + 1)
    out = np.full((4, Q), np.nan)
    for q in orders:
        try:
            r = morans_i(field, contiguity.band(q), permutations, seed + int(q))
        except EmptyBand:
            continue
        lo, hi = r.band(level)
        out[:, q - 1] = (r.I, lo, hi, r.expectation)
    return Correlogram(orders, out[0], out[1], out[2], out[3])


# --- Monte Carlo summaries ------------------------------------------------

SUMMARY_COLUMNS = ("Mean", "Bias", "SE", "SE_B", "RMSE")


def summarize_mc(estimates, truth: dict, se=None, se_boot=None, aicc_values=None, mse_values=None) -> dict:
    """Table-style summary of repeated estimates.

    Parameters
    ----------
    estimates : sequence of dicts name -> estimate (one per replication)
    truth : dict name -> true value; only these names are summarized
    se, se_boot : optional sequences of dicts with per-replication standard
        errors; their means are reported
    aicc_values, mse_values : optional per-replication fit statistics

    Returns
    -------
    dict name -> dict column -> value, plus ``"AICc"`` and ``"MSE"`` means.

    ``RMSE^2 = Bias^2 + Var`` holds with the population variance
    (``ddof=0``) of the estimates.
    """
    estimates = list(estimates)
    if not estimates:
        raise ValueError("need at least one fit")
    out = {}
    for name, true in truth.items():
        v = np.array([e[name] for e in estimates], dtype=float)
        bias = v.mean() - true
        row = {
            "Mean": float(v.mean()),
            "Bias": float(bias),
            "SE": float(np.mean([s[name] for s in se])) if se else math.nan,
            "SE_B": float(np.mean([s[name] for s in se_boot])) if se_boot else math.nan,
            "RMSE": float(np.sqrt(np.mean((v - true) ** 2))),
            "Var": float(v.var()),
        }
        out[name] = row
    out["AICc"] = float(np.mean(aicc_values)) if aicc_values is not None else math.nan
    out["MSE"] = float(np.mean(mse_values)) if mse_values is not None else math.nan
    return out


def format_summary(summary: dict, truth: dict, title: str = "") -> str:
    """Plain-text block laid out like a results table."""
    names = list(truth)
    lines = []
    if title:
        lines.append(title)
    lines.append("%-6s" % "" + "".join(f"{n:>14s}" for n in names) + f"{'AICc':>12s}{'MSE':>12s}")
    for col in SUMMARY_COLUMNS:
        cells = "".join(f"{summary[n][col]:>14.5f}" for n in names)
        tail = f"{summary['AICc']:>12.1f}{summary['MSE']:>12.5f}" if col == "Mean" else ""
        lines.append(f"{col:<6s}{cells}{tail}")
    return "\n".join(lines)
