import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dephtrap.config import preset
from dephtrap.params import BoxGeometry, EitParams, InteractionParams, mhz_over_2pi, sample_background

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def dimer_cfg():
    return preset("dimer-bind")


@pytest.fixture(scope="session")
def dimer_eit(dimer_cfg):
    return dimer_cfg.eit()


@pytest.fixture(scope="session")
def bench_inter():
    return preset("gamma-map-benchmark").interactions()


@pytest.fixture(scope="session")
def single_cfg():
    return preset("single-well")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_tube_gas():
    """A few dozen atoms in a thin tube around the dimer axis."""
    geo = BoxGeometry.tube(12.0, 12.0 * 0.07)
    return sample_background(geo, 1.6e21, seed=3, count=40)


@pytest.fixture(scope="session")
def detuned_eit():
    return EitParams(mhz_over_2pi(0.3), mhz_over_2pi(5.0), mhz_over_2pi(2.0), mhz_over_2pi(-1.0),
                     mhz_over_2pi(6.1))


@pytest.fixture(scope="session")
def weak_inter(dimer_eit):
    return InteractionParams(mhz_over_2pi(-50.0), mhz_over_2pi(30.0), mhz_over_2pi(200.0))
