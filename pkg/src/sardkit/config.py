"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` and ``;`` start comments.  Lists are
comma-separated.  Unknown keys are rejected so typos surface early.

Schema (defaults in brackets):

* domain: ``grid`` [50] cells per side of the unit torus, or ``data`` [none]
  a domain CSV; ``totals`` [false] marks ``y_t0``/``y_t1`` as totals;
  ``lon0``/``lat_ts`` [data means] projection centre; ``width``/``height``
  [1.0] torus size; ``n_s`` [8] star size; ``dm_scale`` [1.2]
* model: ``alpha`` [0.01], ``phi`` [0.01], ``gamma_S`` [0], ``gamma_A``
  [-0.00175], ``gamma_R`` [0.0025], ``gamma_D`` [0.00525], ``h_A`` [0.15],
  ``h_R`` [0.4], ``components`` [A,R,D, plus S when the data has ``s``]
* time: ``tau`` [1.0], ``t_end`` [1.0], ``dt`` [0.01], ``sample_times``
  [0.1,0.25,0.5,0.75,1], ``cfl`` [0.2]
* Monte Carlo: ``mc_sizes`` [144,400,900,1600,2500], ``mc_taus``
  [0.1,0.25,0.5,0.75,1], ``reference_min`` [200], ``jobs`` [1]
* estimation: ``estimators`` [OLS-NAIVE,OLS,IV,ML], ``error_weights``
  [true], ``contiguity`` [rook], ``contiguity_threshold`` [none],
  ``contiguity_order`` [10], ``bootstrap_reps`` [0], ``fit_method`` [ML],
  ``moran_permutations`` [0, normal-approximation bands]
* searches: ``h_A_grid`` / ``h_R_grid`` [h_A / h_R], ``d_bar_grid`` [none]
* workflow: ``horizon`` [tau], ``forecast_years`` [10], ``profile_points``
  [50], ``profile_reps`` [200], ``profile_bandwidth`` [Silverman]
* particles: ``n_agents`` [20000], ``particle_dt`` [0.01]
* run: ``seed`` [0], ``output`` [out]
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import ConfigError

_SECTION = "run"


def _floats(v):
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _ints(v):
    return tuple(int(float(x)) for x in str(v).split(",") if x.strip())


def _names(v):
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    return None if str(v).strip().lower() in ("", "none") else float(v)


def _opt_str(v):
    return None if str(v).strip().lower() in ("", "none") else str(v).strip()


@dataclass
class ExperimentConfig:
    grid: int = 50
    data: str | None = None
    totals: bool = False
    lon0: float | None = None
    lat_ts: float | None = None
    width: float = 1.0
    height: float = 1.0
    n_s: int = 8
    dm_scale: float = 1.2

    alpha: float = 0.01
    phi: float = 0.01
    gamma_S: float = 0.0
    gamma_A: float = -0.00175
    gamma_R: float = 0.0025
    gamma_D: float = 0.00525
    h_A: float = 0.15
    h_R: float = 0.4
    components: tuple | None = None

    tau: float = 1.0
    t_end: float = 1.0
    dt: float = 0.01
    sample_times: tuple = (0.1, 0.25, 0.5, 0.75, 1.0)
    cfl: float = 0.2

    mc_sizes: tuple = (144, 400, 900, 1600, 2500)
    mc_taus: tuple = (0.1, 0.25, 0.5, 0.75, 1.0)
    reference_min: int = 200
    jobs: int = 1

    estimators: tuple = ("OLS-NAIVE", "OLS", "IV", "ML")
    error_weights: bool = True
    contiguity: str = "rook"
    contiguity_threshold: float | None = None
    contiguity_order: int = 10
    bootstrap_reps: int = 0
    fit_method: str = "ML"
    moran_permutations: int = 0

    h_A_grid: tuple | None = None
    h_R_grid: tuple | None = None
    d_bar_grid: tuple = ()

    horizon: float | None = None
    forecast_years: float = 10.0
    profile_points: int = 50
    profile_reps: int = 200
    profile_bandwidth: float | None = None

    n_agents: int = 20000
    particle_dt: float = 0.01

    seed: int = 0
    output: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.h_A_grid is not None and not len(self.h_A_grid):
            raise ConfigError("h_A_grid must be nonempty")
        if self.h_R_grid is not None and not len(self.h_R_grid):
            raise ConfigError("h_R_grid must be nonempty")
        if not (self.h_A > 0 and self.h_R > 0):
            raise ConfigError("bandwidths must be positive")
        if self.gamma_D < 0:
            raise ConfigError("gamma_D must be nonnegative")
        if any(t <= 0 for t in self.mc_taus):
            raise ConfigError("mc_taus must be positive")
        for n in self.mc_sizes:
            k = round(n**0.5)
            if k * k != n:
                raise ConfigError(f"Monte Carlo size {n} is not a square grid")
        bad = set(self.estimators) - {"OLS-NAIVE", "OLS", "IV", "ML"}
        if bad:
            raise ConfigError(f"unknown estimators {sorted(bad)}")
        if self.fit_method not in ("OLS-NAIVE", "OLS", "IV", "ML"):
            raise ConfigError(f"unknown fit_method {self.fit_method!r}")
        if self.contiguity not in ("rook", "distance"):
            raise ConfigError("contiguity must be 'rook' or 'distance'")
        if self.contiguity == "distance" and self.contiguity_threshold is None:
            raise ConfigError("distance contiguity needs contiguity_threshold")

    @property
    def h_grid(self):
        return (self.h_A_grid or (self.h_A,), self.h_R_grid or (self.h_R,))

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        kinds = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                kwargs[key] = _PARSERS.get(key, _parser_for(kinds[key]))(raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        cp.optionxform = str
        with open(path) as fh:
            try:
                cp.read_string(f"[{_SECTION}]\n" + fh.read())
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
        values = dict(cp[_SECTION])
        values.update(overrides or {})
        return cls.from_mapping(values)

    def as_lines(self) -> list:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name} = {'none' if v is None else v}")
        return out


def _parser_for(f):
    t = str(f.type)
    if t.startswith("bool"):
        return _bool
    if t.startswith("int"):
        return lambda v: int(float(v))
    if t.startswith("float |"):
        return _opt_float
    if t.startswith("float"):
        return float
    if t.startswith("str |"):
        return _opt_str
    return str


_PARSERS = {
    "sample_times": _floats,
    "mc_sizes": _ints,
    "mc_taus": _floats,
    "estimators": _names,
    "components": lambda v: None if str(v).strip().lower() in ("", "none") else _names(v),
    "h_A_grid": lambda v: None if str(v).strip().lower() in ("", "none") else _floats(v),
    "h_R_grid": lambda v: None if str(v).strip().lower() in ("", "none") else _floats(v),
    "d_bar_grid": _floats,
}
