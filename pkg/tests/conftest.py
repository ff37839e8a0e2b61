import os

import numpy as np
import pytest
from hypothesis import settings

from sbfr import densities, oracles
from sbfr.lattice import Box

settings.register_profile("sbfr", max_examples=60, deadline=None)
settings.load_profile("sbfr")


@pytest.fixture
def brownian():
    return oracles.closed_form_model("brownian", 1, 1.0)


@pytest.fixture
def ou():
    return oracles.closed_form_model("ou", 1, 1.0, theta=1.0)


@pytest.fixture
def unit_box():
    return Box([0.0], [1.0])


@pytest.fixture
def smooth_marginals(unit_box):
    rho0 = densities.PolynomialDensity(unit_box, [(1.0, 1.0, -0.5)])
    rhoT = densities.PolynomialDensity(unit_box, [(1.5, -1.0, 0.8)])
    return rho0, rhoT


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def single_thread(monkeypatch):
    monkeypatch.setenv("SBFR_THREADS", "1")
    yield
    os.environ.pop("SBFR_THREADS", None)
