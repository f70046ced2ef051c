import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_report import LINES as ACCEPTANCE_LINES  # noqa: E402
from vsagp import gp, testbench  # noqa: E402
from vsagp.plant import PlantParams, SensorNoise  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def noiseless_params():
    return PlantParams(noise=SensorNoise.noiseless())


@pytest.fixture(scope="session")
def default_params():
    return PlantParams()


@pytest.fixture(scope="session")
def noiseless_dataset(noiseless_params):
    return testbench.generate_dataset(noiseless_params, testbench.GridSpec())


@pytest.fixture(scope="session")
def default_dataset(default_params):
    return testbench.generate_dataset(default_params, testbench.GridSpec())


@pytest.fixture(scope="session")
def default_models(default_dataset):
    return gp.fit(default_dataset, "I"), gp.fit(default_dataset, "II")


@pytest.fixture(scope="session")
def small_noiseless_models(noiseless_params):
    d = testbench.generate_dataset(noiseless_params, testbench.GridSpec(points_per_axis=9))
    return d, gp.fit(d, "I"), gp.fit(d, "II")
