import pytest

from sardkit.config import ExperimentConfig
from sardkit.errors import ConfigError


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    assert cfg.h_grid == ((0.15,), (0.4,))
    assert cfg.mc_sizes == (144, 400, 900, 1600, 2500)


def test_from_file_with_comments_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# experiment\ngrid = 20   ; cells\ntau = 0.5\nh_A_grid = 0.1, 0.15\nerror_weights = no\n"
                    "estimators = OLS,ML\ncontiguity_threshold = none\n")
    cfg = ExperimentConfig.from_file(path, {"seed": "7"})
    assert cfg.grid == 20 and cfg.tau == 0.5 and cfg.seed == 7
    assert cfg.h_A_grid == (0.1, 0.15)
    assert cfg.error_weights is False
    assert cfg.estimators == ("OLS", "ML")
    assert cfg.contiguity_threshold is None


def test_as_lines_round_trip(tmp_path):
    cfg = ExperimentConfig.from_mapping({"grid": "30", "mc_taus": "0.1,1", "components": "A,D"})
    path = tmp_path / "echo.cfg"
    path.write_text("\n".join(cfg.as_lines()))
    assert ExperimentConfig.from_file(path) == cfg


@pytest.mark.parametrize(
    "values",
    [
        {"tau": "0"},
        {"h_A": "-1"},
        {"gamma_D": "-0.1"},
        {"mc_sizes": "144,150"},
        {"estimators": "OLS,GMM"},
        {"fit_method": "IV2"},
        {"contiguity": "queen"},
        {"contiguity": "distance"},
        {"h_A_grid": ","},
        {"unknown_key": "1"},
        {"grid": "many"},
        {"error_weights": "maybe"},
    ],
)
def test_invalid(values):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(values)


def test_malformed_file(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("grid 20\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)
