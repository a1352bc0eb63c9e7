import numpy as np
import pytest

from orbistab import RunConfig
from orbistab.mechanics import cart_pendulum
from orbistab.orbit import CosineSwingTemplate, plan_orbit
from orbistab.projection import ProjectionOperator
from orbistab.riccati import SolverConfig, solve
from orbistab.tvlin import build

REFERENCE_A2 = 0.1129


@pytest.fixture(scope="session")
def system():

    return cart_pendulum()


@pytest.fixture(scope="session")
def template():

    return CosineSwingTemplate(a2=REFERENCE_A2)


@pytest.fixture(scope="session")
def orbit(system, template):

    return plan_orbit(system, template, grid_size=2048)


@pytest.fixture(scope="session")
def wide_orbit(system):
    """The large swing whose profile crosses the singular points visibly."""

    return plan_orbit(system, CosineSwingTemplate(a2=0.5), grid_size=1024)


@pytest.fixture(scope="session")
def projection(orbit):

    return ProjectionOperator(orbit=orbit)


@pytest.fixture(scope="session")
def distance_projection(orbit):

    return ProjectionOperator(orbit=orbit, variant="min_distance")


@pytest.fixture(scope="session")
def linearization(system, orbit, projection):

    return build(system, orbit, projection, "mixed", grid=256)


@pytest.fixture(scope="session")
def solver_config():

    return SolverConfig(Q=np.eye(4), Gamma=np.array([[0.1]]), kappa=0.1, fourier_order=40)


@pytest.fixture(scope="session")
def gain_schedule(linearization, solver_config):

    return solve(linearization, solver_config)


@pytest.fixture
def reference_config():

    return RunConfig.reference()


@pytest.fixture
def config_file(tmp_path, reference_config):
    """Writes a copy of the reference configuration with overrides, returns its path."""

    def write(**sections):
        data = reference_config.model_dump(mode="json")
        for section, values in sections.items():
            data[section].update(values)
        filepath = tmp_path / "config.json"
        filepath.write_text(RunConfig(**data).model_dump_json(indent=2))
        return str(filepath)

    return write
