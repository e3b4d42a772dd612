import numpy as np
import pytest

from controlsets.analysis import find_equilibrium, homoclinic_orbit
from controlsets.scenarios import (SANDSTEDE_WINDOW, sandstede_grid, sandstede_section,
                                   sandstede_system)


@pytest.fixture(scope="session")
def sandstede():
    return sandstede_system()


@pytest.fixture(scope="session")
def window():
    return SANDSTEDE_WINDOW


@pytest.fixture(scope="session")
def section():
    return sandstede_section()


@pytest.fixture(scope="session")
def grid150():
    return sandstede_grid(150)


@pytest.fixture(scope="session")
def saddle0(sandstede):
    return find_equilibrium(sandstede, 0.0, (0.1, -0.1))


@pytest.fixture(scope="session")
def loop0(sandstede, saddle0, window):
    return homoclinic_orbit(sandstede, 0.0, saddle0, window, anchor=(1.0, 0.0))


def curve_points(n):
    """Closed-form samples of x^2 (1 - x) = y^2 via x = sin^2(phi), y = sin^2(phi) cos(phi)."""
    phi = np.linspace(0.0, np.pi, n)
    return np.column_stack([np.sin(phi) ** 2, np.sin(phi) ** 2 * np.cos(phi)])


@pytest.fixture(scope="session")
def curve():
    return curve_points
