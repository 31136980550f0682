import numpy
import pytest

from sphcox.covariance import CovarianceModel, default_regimes
from sphcox.field import TimeGrid


@pytest.fixture
def rng():
    return numpy.random.default_rng(20240611)


@pytest.fixture
def model():
    return CovarianceModel()


@pytest.fixture
def raw_model():
    return CovarianceModel(bq_convention="raw")


@pytest.fixture
def null_model():
    return CovarianceModel(variance_scale=0.0)


@pytest.fixture(params=sorted(default_regimes().items()), ids=lambda item: item[0])
def regime_model(request):
    return CovarianceModel(theta=request.param[1])


@pytest.fixture
def grid():
    return TimeGrid(0.0, 10.0, 100)


@pytest.fixture
def coarse_grid():
    # unit spacing, so every integer lag is a node
    return TimeGrid(0.0, 10.0, 11)
