import json

import numpy as np
import pytest

from dtcsim.runner.config import ScenarioConfig, config_from_dict


def small_config(**overrides):
    """Default scene on a reduced grid with short training, for fast runs."""
    doc = ScenarioConfig().to_dict()
    doc.update(grid_n_x=40, grid_n_y=4, n_users=6, horizon=30, seeds=[0, 1])
    doc["traffic"].update(n_control=3)
    doc["predictor"].update(holdout_row=1, pl_epochs=3, recon_epochs=2, recon_samples=80)
    doc.update(overrides)
    return config_from_dict(doc)


@pytest.fixture(scope="session")
def small_cfg():
    return small_config()


@pytest.fixture(scope="session")
def small_config_file(tmp_path_factory, small_cfg):
    path = tmp_path_factory.mktemp("cfg") / "scenario.json"
    path.write_text(json.dumps(small_cfg.to_dict()))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_channels(rng, n_bs, n_users, n_t, n_sc, scale=1e-5):
    shape = (n_bs, n_users, n_t, n_sc)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# acceptance results: (criterion, passed, detail), printed after the run
ACCEPTANCE = []


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
