"""
Shared fixtures for the APE toolkit tests.
"""
import numpy as np
import pytest

from app.models.schemas import Dataset, DgpSpec, Family
from app.services.simulation import draw


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale Monte Carlo checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale Monte Carlo acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def additive_draw():
    """Additive Y and X with N(0, 1) errors."""
    return draw(DgpSpec(y_family=Family.ADDITIVE, x_family=Family.ADDITIVE, M=1, n=2000), seed=11)


@pytest.fixture
def simple_draw():
    return draw(DgpSpec(y_family=Family.SIMPLE, x_family=Family.SIMPLE, M=2, n=1000), seed=5)


@pytest.fixture
def plr_data():
    """Partially linear sample: Y = 0.5 X + sin(Z1) + eps, X = Z1^2 + Z2 + nu."""
    rng = np.random.default_rng(3)
    n = 3000
    z = rng.normal(0.0, 1.0, (n, 2))
    nu = rng.standard_normal(n)
    x = z[:, 0] ** 2 + z[:, 1] + nu
    y = 0.5 * x + np.sin(z[:, 0]) + rng.standard_normal(n)
    return Dataset(y=y, x=x, z=z, nu_known=nu)


@pytest.fixture
def isolated_settings(tmp_path, monkeypatch):
    """Point every output location of the CLI at a temporary directory."""
    monkeypatch.setenv("APE_OUTPUT_DIR", str(tmp_path / "reports"))
    monkeypatch.setenv("APE_LOGS_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("APE_RESULTS_DB", str(tmp_path / "runs.db"))
    monkeypatch.delenv("APE_SEED", raising=False)
    monkeypatch.delenv("APE_WORKERS", raising=False)
    monkeypatch.delenv("APE_STORE_RESULTS", raising=False)
    return tmp_path
