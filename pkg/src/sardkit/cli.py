"""Command-line entry point: ``sardkit <subcommand> [--config FILE] [--seed N] [--set KEY=VALUE ...]``.

Data-driven subcommands read the domain CSV named by ``data``; without one
they simulate the three-peak benchmark on a ``grid x grid`` torus and use
its states at ``0`` and ``tau`` as the observed pair.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import Workspace, convergence_profile, decompose, forecast
from .config import ExperimentConfig
from .diagnostics import correlogram
from .errors import ConfigError, SardError
from .geometry import grid_domain
from .harness import bandwidth_search, fit_all, model_params, run_montecarlo, simulate_truth, write_manifest
from .io import read_locations, write_columns
from .particles import ParticleEnsemble, periodic_kde, simulate_particles
from .simulate import THREE_PEAKS, Discretization, PdeState, integrate


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.output is not None:
        overrides["output"] = args.output
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_mapping(overrides)


def _observed(cfg: ExperimentConfig):
    """Workspace plus the observed pair ``(y0, y1)`` and the period length."""
    if cfg.data:
        data = read_locations(cfg.data, cfg.totals, cfg.lon0, cfg.lat_ts)
        s = data.s if np.ptp(data.s) > 0 else None
        ws = Workspace.build(data.domain, cfg.h_A, cfg.h_R, s=s, n_s=cfg.n_s, dm_scale=cfg.dm_scale)
        return ws, data.y0, data.y1, cfg.tau
    Y = simulate_truth(cfg.grid, model_params(cfg), [cfg.tau], cfg.reference_min, cfg.dt, cfg.cfl)
    dom = grid_domain(cfg.grid, cfg.grid, cfg.width, cfg.height, torus=True)
    ws = Workspace.build(dom, cfg.h_A, cfg.h_R, n_s=cfg.n_s, dm_scale=cfg.dm_scale)
    return ws, Y[0], Y[1], cfg.tau


def _fit(cfg, ws, y0, y1, tau, methods):
    design = ws.design(y0, y1, tau, cfg.components)
    fs = fit_all(design, ws, methods, cfg.error_weights, cfg.contiguity_order, cfg.contiguity,
                 cfg.contiguity_threshold)
    for m, msg in fs.errors.items():
        print(f"warning: {m} failed: {msg}", file=sys.stderr)
    return design, fs


def _primary(cfg, ws, y0, y1, tau):
    design, fs = _fit(cfg, ws, y0, y1, tau, (cfg.fit_method,))
    if cfg.fit_method not in fs.fits:
        raise SardError(f"{cfg.fit_method} fit failed: {fs.errors.get(cfg.fit_method)}")
    return design, fs.fits[cfg.fit_method]


def cmd_simulate(cfg, out):
    params = model_params(cfg)
    disc = Discretization.on_grid(cfg.grid, params, cfg.width, cfg.height, cfg.n_s, cfg.dm_scale)
    y0 = THREE_PEAKS(disc.domain)
    times = [t for t in cfg.sample_times if t <= cfg.t_end]
    tr = integrate(PdeState(0.0, y0, disc.domain), params, cfg.t_end, cfg.dt, disc, times, cfg.cfl)
    paths = tr.to_csv(out / "trajectory")
    print(f"wrote {len(paths)} states to {out / 'trajectory'}")


def cmd_particles(cfg, out):
    params = model_params(cfg)
    dom = grid_domain(cfg.grid, cfg.grid, cfg.width, cfg.height, torus=True)
    y0 = THREE_PEAKS(dom)
    ens = ParticleEnsemble.sample(y0, dom, cfg.n_agents, cfg.seed)
    ens = simulate_particles(ens, params, cfg.t_end, cfg.particle_dt)
    write_columns(out / "positions.csv", {"x": ens.positions[:, 0], "y": ens.positions[:, 1]})
    dens = periodic_kde(ens.positions, cfg.grid, cfg.grid, cfg.width, cfg.height) * ens.mass
    write_columns(out / "density.csv", {"y": dens}, dom.ids)
    print(f"moved {ens.n} agents to t={ens.t:g}")


def cmd_design(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    design = ws.design(y0, y1, tau, cfg.components)
    design.to_csv(out / "design.csv")
    print(f"wrote design for {design.n} locations")


def cmd_fit(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    design, fs = _fit(cfg, ws, y0, y1, tau, cfg.estimators)
    for m, fit in fs.fits.items():
        d = fit.summary_dict()
        try:
            d.update({f"structural_{k}": v for k, v in fit.structural(design).as_dict().items()})
        except SardError as exc:
            d["structural_error"] = str(exc)
        items = [(k, v) for k, v in d.items()]
        write_columns(out / f"fit_{m}.csv", {"key": [k for k, _ in items], "value": [_cell(v) for _, v in items]})
        print(f"{m:10s} AICc={fit.aicc:.1f} MSE={fit.mse:.3g}")


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def cmd_mc(cfg, out):
    run_montecarlo(cfg)
    print((out / "mc_estimates.txt").read_text())


def cmd_search(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    ha, hr = cfg.h_grid
    res = bandwidth_search(ws, y0, y1, tau, ha, hr, cfg.components, cfg.error_weights,
                           cfg.contiguity_order, cfg.contiguity, cfg.contiguity_threshold)
    res.to_csv(out / "bandwidth_search.csv")
    print(f"best (h_A, h_R) = {res.best}")


def _decomposition(cfg, ws, y0, y1, tau):
    design, fit = _primary(cfg, ws, y0, y1, tau)
    params = fit.structural(design)
    horizon = cfg.horizon or tau
    return decompose(params, ws, y0, horizon)


def cmd_decompose(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    dec = _decomposition(cfg, ws, y0, y1, tau)
    dec.to_csv(out / "decomposition.csv")
    print(f"median fitted growth {np.nanmedian(dec.growth):.4%}; {int(dec.negative.sum())} flagged locations")


def cmd_forecast(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    design, fit = _primary(cfg, ws, y0, y1, tau)
    fc = forecast(fit.structural(design), ws, y1, cfg.forecast_years)
    fc.to_csv(out / "forecast.csv")
    print(f"median forecast growth {np.nanmedian(fc.growth):.4%}")


def cmd_moran(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    _, fit = _primary(cfg, ws, y0, y1, tau)
    cont = ws.contiguity(cfg.contiguity_order, cfg.contiguity, cfg.contiguity_threshold)
    perms = cfg.moran_permutations
    correlogram(fit.residuals, cont, permutations=perms, seed=cfg.seed).to_csv(out / "correlogram_residuals.csv")
    if fit.innovations is not None:
        correlogram(fit.innovations, cont, permutations=perms, seed=cfg.seed).to_csv(
            out / "correlogram_innovations.csv")
    print(f"wrote correlograms for {cfg.fit_method} residuals")


def cmd_profile(cfg, out):
    ws, y0, y1, tau = _observed(cfg)
    dec = _decomposition(cfg, ws, y0, y1, tau)
    prof = convergence_profile(dec.contributions, y0, cfg.profile_points, cfg.profile_bandwidth,
                               cfg.profile_reps, seed=cfg.seed)
    for j, p in prof.items():
        p.to_csv(out / f"profile_{j}.csv")
    print(f"wrote {len(prof)} profiles")


COMMANDS = {
    "simulate": (cmd_simulate, "integrate the growth model from the three-peak field"),
    "particles": (cmd_particles, "run the interacting-agent system and its density estimate"),
    "design": (cmd_design, "export regressors for the observed pair"),
    "fit": (cmd_fit, "estimate the growth regression with the configured estimators"),
    "mc": (cmd_mc, "run the Monte Carlo study"),
    "search-bandwidth": (cmd_search, "grid search over kernel bandwidths by AICc"),
    "decompose": (cmd_decompose, "counterfactual growth contributions per component"),
    "forecast": (cmd_forecast, "iterate the fitted dynamics forward"),
    "moran": (cmd_moran, "Moran's I correlograms of fit residuals"),
    "profile": (cmd_profile, "kernel-regression convergence profiles of the contributions"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sardkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sardkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="key = value configuration file (default: built-in defaults)")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config; default 0)")
        sp.add_argument("--output", help="output directory (overrides the config; default 'out')")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        if args.command != "mc":
            write_manifest(out, cfg, args.command)
        COMMANDS[args.command][0](cfg, out)
    except (SardError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
