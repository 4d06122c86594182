import numpy as np
import pytest

from sardkit.geometry import build_domain, build_stars, grid_domain
from sardkit.gfdm import build_operators


@pytest.fixture(scope="session")
def torus12():
    return grid_domain(12)


@pytest.fixture(scope="session")
def torus30():
    return grid_domain(30)


@pytest.fixture(scope="session")
def ops30(torus30):
    return build_operators(torus30, build_stars(torus30))


@pytest.fixture(scope="session")
def jittered900():
    """30x30 planar grid with each node moved by up to 30% of the spacing."""
    rng = np.random.default_rng(7)
    h = 1.0 / 30
    base = (np.stack(np.meshgrid(np.arange(30), np.arange(30), indexing="ij"), -1).reshape(-1, 2) + 0.5) * h
    pts = base + rng.uniform(-0.3, 0.3, base.shape) * h
    return build_domain(pts, np.full(900, h * h))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def workspace144():
    from sardkit.analysis import Workspace

    return Workspace.build(grid_domain(12), 0.15, 0.4)


@pytest.fixture(scope="session")
def truth144():
    """Three-peak truth on a 48^2 reference grid, averaged to 12^2 cells at t = 0, 1."""
    from sardkit.harness import simulate_truth
    from sardkit.simulate import ModelParams

    return simulate_truth(12, ModelParams(), [1.0], minimum=48)


@pytest.fixture(scope="session")
def design144(workspace144, truth144):
    return workspace144.design(truth144[0], truth144[1], 1.0)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
