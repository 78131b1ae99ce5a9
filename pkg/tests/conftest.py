import numpy as np
import pytest

from arzobs.fd import GreenshieldParams
from arzobs.linearize import reference_state


@pytest.fixture
def greenshield():
    return GreenshieldParams(v_f=40.0, rho_m=0.16, gamma=1.0)


@pytest.fixture
def ref(greenshield):
    return reference_state(greenshield, 0.12, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def parabolic_linear_flow(rho, rho_m, rho_c, q_max):
    """Parabolic free-flow branch peaking at (rho_c, q_max), straight congested
    branch down to Q(rho_m) = 0."""
    rho = np.asarray(rho, dtype=float)
    free = q_max * (1.0 - ((rho - rho_c) / rho_c) ** 2)
    jam = q_max * (rho_m - rho) / (rho_m - rho_c)
    return np.where(rho < rho_c, free, jam)
