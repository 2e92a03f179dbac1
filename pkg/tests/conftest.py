import numpy as np
import pytest

from conformal_spectrum import build_sphere_mesh, build_torus_mesh
from conformal_spectrum.config import RunConfig
from conformal_spectrum.pipeline import run_pipeline

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def record_criterion():
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return record


@pytest.fixture(scope="session")
def sphere2():
    return build_sphere_mesh(2)


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere_mesh(3)


@pytest.fixture(scope="session")
def sphere4():
    return build_sphere_mesh(4)


@pytest.fixture(scope="session")
def torus16():
    return build_torus_mesh(16, 16)


@pytest.fixture(scope="session")
def torus64():
    return build_torus_mesh(64, 64)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


# end-to-end runs shared by the pipeline and acceptance tests

@pytest.fixture(scope="session")
def sphere_k1_run():
    return run_pipeline(RunConfig(surface="sphere", level=4, k=1).validate())


@pytest.fixture(scope="session")
def sphere_k2_run():
    return run_pipeline(RunConfig(surface="sphere", level=4, k=2).validate())


@pytest.fixture(scope="session")
def sphere_k2_coarse_run():
    return run_pipeline(RunConfig(surface="sphere", level=3, k=2).validate())
