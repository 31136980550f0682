import numpy
import pytest

from sphcox.covariance import CovarianceModel, spacetime_kernel
from sphcox.field import eval_intensity, simulate_coefficients
from sphcox.manifold import NORTH_POLE, sample_uniform_sphere
from sphcox.moments import (
    Configuration,
    intensity,
    log_intensity,
    log_per_scale_density,
    log_product_density,
    pair_correlation,
    per_scale_density,
    scale_intensity,
    scale_pair_correlation,
)
from sphcox.util import ConfigError, DegreeError, spawn_generators


def _random_configuration(rng, n):
    return Configuration(rng.uniform(0, 10, n), sample_uniform_sphere(rng, n))


def test_single_point_density_is_intensity(model):
    c = Configuration([3.0], [NORTH_POLE.as_array()])
    assert log_product_density(model, c) == pytest.approx(0.1356243 / 2, rel=1e-6)
    assert log_product_density(model, c) == pytest.approx(log_intensity(model))


def test_coincident_pair(model):
    c = Configuration([2.0, 2.0], [[0, 0, 1], [0, 0, 1]])
    expected = 2 * log_intensity(model) + spacetime_kernel(model, 0.0, 1.0)
    assert log_product_density(model, c) == pytest.approx(expected, rel=1e-12)


def test_null_model_density(null_model, rng):
    for n in (1, 2, 5):
        assert log_product_density(null_model, _random_configuration(rng, n)) == 0.0
    assert intensity(null_model) == 1.0


def test_single_scale_example(model):
    c = Configuration([0.0], [[0, 0, 1]])
    assert per_scale_density(model, 0, c) == pytest.approx(1.020094, rel=1e-6)
    assert per_scale_density(model, 0, c) == pytest.approx(scale_intensity(model, 0))


def test_scales_factorize_product_density(model, rng):
    for _ in range(100):
        n = int(rng.integers(1, 4))
        c = _random_configuration(rng, n)
        total = sum(log_per_scale_density(model, q, c) for q in range(model.M + 1))
        assert total == pytest.approx(log_product_density(model, c), abs=1e-10)


def test_intensity_factorizes(model):
    product = numpy.prod([scale_intensity(model, q) for q in range(model.M + 1)])
    assert product == pytest.approx(intensity(model), rel=1e-12)


def test_pair_correlation_matches_density(model, rng):
    for _ in range(20):
        c = _random_configuration(rng, 2)
        tau = c.times[0] - c.times[1]
        u = c.locations[0] @ c.locations[1]
        log_g = log_product_density(model, c) - 2 * log_intensity(model)
        assert numpy.log(pair_correlation(model, tau, u)) == pytest.approx(log_g, abs=1e-12)


def test_pair_correlation_at_origin(model):
    assert pair_correlation(model, 0.0, 1.0) == pytest.approx(numpy.exp(0.1356243), rel=1e-6)


def test_scale_pair_correlations_multiply(model, rng):
    tau = rng.uniform(-10, 10, 30)
    u = rng.uniform(-1, 1, 30)
    product = numpy.prod([scale_pair_correlation(model, q, tau, u) for q in range(6)], axis=0)
    numpy.testing.assert_allclose(product, pair_correlation(model, tau, u), rtol=1e-12)


def test_lognormal_second_moment(model, coarse_grid):
    # E[Lambda(x) Lambda(y)] over field replicates is rho^(2)(x, y)
    x_t, y_t = 2.0, 3.0
    x_z = numpy.array([0.0, 0.0, 1.0])
    y_z = numpy.array([numpy.sin(0.5), 0.0, numpy.cos(0.5)])
    n = 10**4
    products = numpy.empty(n)
    for i, r in enumerate(spawn_generators(21, n)):
        f = simulate_coefficients(model, coarse_grid, r)
        products[i] = eval_intensity(f, x_t, x_z) * eval_intensity(f, y_t, y_z)
    expected = numpy.exp(log_product_density(model, Configuration([x_t, y_t], [x_z, y_z])))
    se = products.std(ddof=1) / numpy.sqrt(n)
    assert abs(products.mean() - expected) < 4 * se


def test_degree_checks(model):
    c = Configuration([1.0], [[0, 0, 1]])
    with pytest.raises(DegreeError):
        log_per_scale_density(model, 6, c)
    assert log_per_scale_density(model, 6, c, extended=True) > 0


def test_configuration_validation():
    with pytest.raises(ConfigError):
        Configuration([], numpy.zeros((0, 3)))
    with pytest.raises(ConfigError):
        Configuration([1.0, 2.0], [[0, 0, 1]])


def test_single_degree_model():
    model = CovarianceModel(M=0)
    assert intensity(model) == pytest.approx(numpy.exp(0.5 / (8 * numpy.pi)))
