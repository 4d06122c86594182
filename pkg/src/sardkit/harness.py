"""Experiment drivers: estimation pipelines, the Monte Carlo study and the
bandwidth grid search.

Every driver is deterministic for a given configuration and writes only
delimited text.
"""

from __future__ import annotations

import csv
import math
import os
import platform
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import Workspace
from .config import ExperimentConfig
from .design import SardDesign
from .diagnostics import format_summary, summarize_mc
from .errors import NonConvergence, SardError, WeakInstrumentsWarning
from .estimators import ErrorWeights, bootstrap, estimate_error_weights, fit_iv, fit_ml, fit_ols
from .geometry import grid_domain
from .simulate import THREE_PEAKS, Discretization, ModelParams, PdeState, block_average, integrate, reference_size

METHODS = ("OLS-NAIVE", "OLS", "IV", "ML")


def model_params(cfg: ExperimentConfig) -> ModelParams:
    return ModelParams(alpha=cfg.alpha, phi=cfg.phi, gamma_S=cfg.gamma_S, gamma_A=cfg.gamma_A,
                       gamma_R=cfg.gamma_R, gamma_D=cfg.gamma_D, h_A=cfg.h_A, h_R=cfg.h_R)


def truth_table(params: ModelParams, components) -> dict:
    gam = {"S": params.gamma_S, "A": params.gamma_A, "R": params.gamma_R, "D": params.gamma_D}
    out = {"alpha": params.alpha, "phi": params.phi}
    out.update({f"gamma_{j}": gam[j] for j in components})
    return out


# --- estimation pipeline ----------------------------------------------------

@dataclass
class FitSet:
    """All requested fits of one design, plus the error weights used by ML."""

    design: SardDesign
    fits: dict
    error_weights: ErrorWeights | None = None
    errors: dict = field(default_factory=dict)

    def structural(self, method) -> dict:
        return self.fits[method].structural(self.design).as_dict()


def fit_all(design: SardDesign, ws: Workspace, methods=METHODS, error_weights=True, contiguity_order=10,
            contiguity_method="rook", contiguity_threshold=None) -> FitSet:
    """Run the requested estimators; ML gets ``W_eps`` from its own ``lam = 0`` residuals.

    Estimator failures are recorded in ``errors`` rather than raised, so
    one bad method does not lose the others.
    """
    fits, errors, ew = {}, {}, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WeakInstrumentsWarning)
        for m in methods:
            try:
                if m == "OLS-NAIVE":
                    fits[m] = fit_ols(design, naive=True)
                elif m == "OLS":
                    fits[m] = fit_ols(design)
                elif m == "IV":
                    fits[m] = fit_iv(design)
                elif m == "ML":
                    ml0 = fit_ml(design, None)
                    fits[m] = ml0
                    if error_weights:
                        cont = ws.contiguity(contiguity_order, contiguity_method, contiguity_threshold)
                        ew = estimate_error_weights(ml0.residuals, cont, contiguity_order)
                        if not ew.empty:
                            fits[m] = fit_ml(design, ew, start=ml0)
            except (SardError, np.linalg.LinAlgError) as exc:
                errors[m] = f"{type(exc).__name__}: {exc}"
    return FitSet(design, fits, ew, errors)


# --- Monte Carlo -------------------------------------------------------------

def simulate_truth(n_coarse: int, params: ModelParams, times, minimum=200, dt=0.01, cfl=0.2):
    """Simulate the three-peak field on a fine torus grid and block-average to ``n_coarse^2`` cells.

    Returns an array with one row per time in ``(0,) + times``.
    """
    nf = reference_size(n_coarse, minimum)
    disc = Discretization.on_grid(nf, params)
    y0 = THREE_PEAKS(disc.domain)
    tr = integrate(PdeState(0.0, y0, disc.domain), params, max(times), dt, disc, sample_times=times, cfl=cfl)
    return np.array([block_average(s.y, nf, n_coarse) for s in tr.states])


def _cell_dir(out, n, tau):
    return Path(out) / "mc" / f"N{n}_tau{tau:g}"


def _write_kv(path, items):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for k, v in items:
            w.writerow([k, v if isinstance(v, str) else repr(float(v)) if isinstance(v, (float, np.floating)) else v])


def _read_kv(path):
    with open(path, newline="") as fh:
        return {r["key"]: r["value"] for r in csv.DictReader(fh)}


def _run_cell(args):
    cfg, n, tau, Y, times = args
    params = model_params(cfg)
    cell = _cell_dir(cfg.output, n, tau)
    cell.mkdir(parents=True, exist_ok=True)
    k = int(round(math.sqrt(n)))
    dom = grid_domain(k, k, cfg.width, cfg.height, torus=True)
    ws = Workspace.build(dom, cfg.h_A, cfg.h_R, n_s=cfg.n_s, dm_scale=cfg.dm_scale)
    components = cfg.components or ("A", "R", "D")
    design = ws.design(Y[0], Y[times.index(tau) + 1], tau, components)
    fs = fit_all(design, ws, cfg.estimators, cfg.error_weights, cfg.contiguity_order)
    truth = truth_table(params, components)
    rows = []
    for m in cfg.estimators:
        if m not in fs.fits:
            continue
        fit = fs.fits[m]
        try:
            est = fit.structural(design).as_dict()
        except SardError as exc:
            fs.errors[m] = f"{type(exc).__name__}: {exc}"
            continue
        scale = est["scale"]
        se = dict(zip(fit.names, fit.se * abs(scale)))
        se_b = {}
        if cfg.bootstrap_reps and m != "ML":
            se_b = dict(zip(fit.names, bootstrap(design, m, cfg.bootstrap_reps, cfg.seed) * abs(scale)))
        for name in truth:
            rows.append((m, name, est[name], est[name] - truth[name], se.get(name, math.nan),
                         se_b.get(name, math.nan), fit.aicc, fit.mse))
    with open(cell / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "param", "estimate", "bias", "se", "se_boot", "aicc", "mse"])
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])
    kv = [("N", n), ("tau", repr(float(tau)))]
    if "ML" in fs.fits:
        kv.append(("lambda", float(fs.fits["ML"].lam)))
    if fs.error_weights is not None:
        kv.append(("Q_hat", fs.error_weights.Q_hat))
        kv += [(f"ell_{q + 1}", float(v)) for q, v in enumerate(fs.error_weights.ell)]
        kv += [(f"p_{q + 1}", float(v)) for q, v in enumerate(fs.error_weights.pvalue)]
    kv += [(f"error_{m}", msg) for m, msg in sorted(fs.errors.items())]
    _write_kv(cell / "error_weights.csv", kv)
    # written last: its presence marks the cell complete
    _write_kv(cell / "done.csv", [("status", "ok" if not fs.errors else "partial")])
    return n, tau


def run_montecarlo(cfg: ExperimentConfig) -> Path:
    """Simulate, aggregate, estimate and summarize every ``(N, tau)`` cell.

    Completed cells (those with a ``done.csv``) are skipped, so an
    interrupted run resumes where it stopped.  Writes per-cell CSVs under
    ``<output>/mc`` and the summaries ``mc_estimates.csv``, ``mc_estimates.txt``,
    ``mc_error_weights.csv`` and ``aicc.csv``.
    """
    out = Path(cfg.output)
    (out / "mc").mkdir(parents=True, exist_ok=True)
    write_manifest(out, cfg, "mc")
    params = model_params(cfg)
    times = sorted(float(t) for t in cfg.mc_taus)
    pending = [(n, tau) for n in cfg.mc_sizes for tau in times
               if not (_cell_dir(out, n, tau) / "done.csv").exists()]
    truths = {}
    for n in sorted({n for n, _ in pending}):
        path = out / "mc" / f"truth_N{n}.npy"
        if path.exists():
            truths[n] = np.load(path)
        else:
            k = int(round(math.sqrt(n)))
            truths[n] = simulate_truth(k, params, times, cfg.reference_min, cfg.dt, cfg.cfl)
            np.save(path, truths[n])
    jobs = [(cfg, n, tau, truths[n], times) for n, tau in pending]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            list(pool.map(_run_cell, jobs))
    else:
        for j in jobs:
            _run_cell(j)
    summarize_montecarlo(cfg)
    return out


def summarize_montecarlo(cfg: ExperimentConfig):
    out = Path(cfg.output)
    params = model_params(cfg)
    components = cfg.components or ("A", "R", "D")
    truth = truth_table(params, components)
    times = sorted(float(t) for t in cfg.mc_taus)
    est_f = open(out / "mc_estimates.csv", "w", newline="")
    aicc_f = open(out / "aicc.csv", "w", newline="")
    text = []
    w1, wa = csv.writer(est_f), csv.writer(aicc_f)
    w1.writerow(["N", "tau", "method", "param", "Mean", "Bias", "SE", "SE_B", "RMSE", "AICc", "MSE"])
    wa.writerow(["N", "tau", "method", "AICc", "MSE"])
    weight_rows = []
    for n in cfg.mc_sizes:
        for tau in times:
            cell = _cell_dir(out, n, tau)
            if not (cell / "estimates.csv").exists():
                continue
            with open(cell / "estimates.csv", newline="") as fh:
                rows = list(csv.DictReader(fh))
            for m in cfg.estimators:
                mine = [r for r in rows if r["method"] == m]
                if not mine:
                    continue
                est = {r["param"]: float(r["estimate"]) for r in mine}
                se = {r["param"]: float(r["se"]) for r in mine}
                seb = {r["param"]: float(r["se_boot"]) for r in mine}
                a, mse_v = float(mine[0]["aicc"]), float(mine[0]["mse"])
                summ = summarize_mc([est], truth, [se], [seb], [a], [mse_v])
                for name in truth:
                    s = summ[name]
                    w1.writerow([n, f"{tau:g}", m, name] + [repr(s[c]) for c in ("Mean", "Bias", "SE", "SE_B", "RMSE")]
                                + [repr(a), repr(mse_v)])
                wa.writerow([n, f"{tau:g}", m, repr(a), repr(mse_v)])
                text.append(format_summary(summ, truth, f"N={n} tau={tau:g} {m}"))
            kv = _read_kv(cell / "error_weights.csv")
            weight_rows.append(kv)
    est_f.close()
    aicc_f.close()
    (out / "mc_estimates.txt").write_text("\n\n".join(text) + "\n")
    keys = ["N", "tau", "lambda", "Q_hat"] + [f"ell_{q}" for q in range(1, cfg.contiguity_order + 1)]
    with open(out / "mc_error_weights.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for kv in weight_rows:
            w.writerow([kv.get(k, "") for k in keys])


# --- bandwidth search --------------------------------------------------------

@dataclass
class BandwidthSearch:
    best: tuple
    table: list

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h_A", "h_R", "aicc", "loglik", "status"])
            for h_a, h_r, a, ll, status in self.table:
                w.writerow([repr(h_a), repr(h_r), repr(a), repr(ll), status])


def bandwidth_search(ws: Workspace, y0, y1, tau, h_A_grid, h_R_grid, components=None,
                     error_weights=False, contiguity_order=10, contiguity_method="rook",
                     contiguity_threshold=None) -> BandwidthSearch:
    """ML fit for every ``(h_A, h_R)`` pair; the lowest AICc wins.

    Pairs whose fit fails are kept in the table with ``inf`` AICc.
    """
    if not len(h_A_grid) or not len(h_R_grid):
        raise ValueError("bandwidth grids must be nonempty")
    table = []
    best, best_a = None, math.inf
    for h_a in h_A_grid:
        for h_r in h_R_grid:
            w = ws.with_bandwidths(float(h_a), float(h_r))
            d = w.design(y0, y1, tau, components)
            fs = fit_all(d, w, ("ML",), error_weights, contiguity_order, contiguity_method, contiguity_threshold)
            if "ML" in fs.fits:
                a, ll, status = fs.fits["ML"].aicc, fs.fits["ML"].loglik, "ok"
            else:
                a, ll, status = math.inf, math.nan, fs.errors.get("ML", "failed")
            table.append((float(h_a), float(h_r), float(a), float(ll), status))
            if a < best_a:
                best, best_a = (float(h_a), float(h_r)), a
    if best is None:
        raise NonConvergence("no bandwidth pair produced a fit", diagnostics={"table": table})
    return BandwidthSearch(best, table)


# --- run manifest ------------------------------------------------------------

def _version(mod):
    try:
        return __import__(mod).__version__
    except Exception:  # pragma: no cover - optional module missing
        return "unavailable"


def write_manifest(out, cfg: ExperimentConfig, command: str, extra=None) -> Path:
    """Config echo, library versions and seeds; no timestamps, so reruns are byte-identical."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from . import __version__

    lines = [f"command = {command}", f"seed = {cfg.seed}",
             f"python = {platform.python_version()}", f"sardkit = {__version__}"]
    lines += [f"{m} = {_version(m)}" for m in ("numpy", "scipy", "numba")]
    lines.append(f"backend = {os.environ.get('SARDKIT_BACKEND', 'numba')}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines.append("")
    lines.append("[config]")
    lines += cfg.as_lines()
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


__all__ = [
    "FitSet", "fit_all", "simulate_truth", "run_montecarlo", "summarize_montecarlo",
    "BandwidthSearch", "bandwidth_search", "write_manifest", "model_params", "truth_table",
]
