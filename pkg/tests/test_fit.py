import numpy
import pytest

from sphcox import fit
from sphcox.covariance import CovarianceModel, coef_cov
from sphcox.field import TimeGrid, simulate_coefficients
from sphcox.fit import (
    LatticeCovariance,
    empirical_coef_cov,
    empirical_coef_table,
    field_lattice_values,
    fit_theta,
    spanning_lag_steps,
)
from sphcox.manifold import sphere_grid
from sphcox.util import CapacityError, ConfigError, NumericalError, spawn_generators


LAG_STEPS = (0, 1, 2, 5, 10, 20, 40)
GRID = TimeGrid(0.0, 10.0, 51)
LAGS = numpy.array(LAG_STEPS) * 0.2


@pytest.fixture(scope="module")
def lattice():
    return sphere_grid(8, 16)


@pytest.mark.parametrize("fit_scale", [True, False])
@pytest.mark.parametrize("theta", [0.01, 1.0, 100.0])
def test_noise_free_fit(theta, fit_scale):
    truth = CovarianceModel(theta=theta)
    bhat = numpy.stack([coef_cov(truth, l, LAGS) for l in range(6)])
    result = fit_theta(bhat, range(6), LAGS, CovarianceModel(), fit_scale)
    assert result.theta_hat == pytest.approx(theta, rel=1e-6)
    assert result.residual < 1e-12
    assert result.evaluations > 0
    assert result.variance_scale == pytest.approx(1.0, rel=1e-6)


def test_profiled_variance_scale():
    truth = CovarianceModel(theta=3.0, variance_scale=2.0)
    bhat = numpy.stack([coef_cov(truth, l, LAGS) for l in range(6)])
    result = fit_theta(bhat, range(6), LAGS, CovarianceModel())
    assert result.theta_hat == pytest.approx(3.0, rel=1e-6)
    assert result.variance_scale == pytest.approx(2.0, rel=1e-6)
    fixed = fit_theta(bhat, range(6), LAGS, CovarianceModel(), fit_scale=False)
    assert fixed.variance_scale == 1.0
    assert fixed.residual > result.residual


def test_fit_preconditions(model):
    bhat = numpy.stack([coef_cov(model, l, LAGS) for l in range(2)])
    with pytest.raises(ConfigError):
        fit_theta(bhat[:1], [0], LAGS, model)
    with pytest.raises(ConfigError):
        fit_theta(bhat[:, :4], [0, 1], LAGS[:4], model)
    with pytest.raises(ConfigError):
        fit_theta(bhat, [0, 1, 2], LAGS, model)
    bad = bhat.copy()
    bad[0, 0] = numpy.nan
    with pytest.raises(NumericalError):
        fit_theta(bad, [0, 1], LAGS, model)


def test_fit_objective_is_finite_at_the_bracket_ends():
    lags = numpy.linspace(0.0, 9.9, 100)
    bhat = numpy.stack([coef_cov(CovarianceModel(theta=1e4), l, lags) for l in range(6)])
    with numpy.errstate(over="raise", invalid="raise"):
        result = fit_theta(bhat, range(6), lags, CovarianceModel())
    assert result.theta_hat > 1e3
    bhat = numpy.stack([coef_cov(CovarianceModel(theta=1e-4), l, lags) for l in range(6)])
    with numpy.errstate(over="raise", invalid="raise"):
        result = fit_theta(bhat, range(6), lags, CovarianceModel())
    assert result.theta_hat < 1e-3


def test_lattice_values_are_reproducible(model, lattice):
    points, _ = lattice
    a = list(field_lattice_values(model, GRID, points, 3, seed=8))
    b = list(field_lattice_values(model, GRID, points, 3, seed=8, batch=2))
    assert len(a) == 3
    assert a[0].shape == (51, len(points))
    for x, y in zip(a, b):
        numpy.testing.assert_array_equal(x, y)


def test_recovers_degree_zero_variance(lattice):
    points, weights = lattice
    truth = CovarianceModel(M=2, bq_convention="raw")
    values = field_lattice_values(truth, GRID, points, 200, seed=3)
    bhat = empirical_coef_table(values, 4, LAG_STEPS, points, weights, "raw")
    assert bhat.shape == (5, len(LAG_STEPS))
    assert bhat[0, 0] == pytest.approx(0.5, abs=0.15)
    # no degree-4 content in an M = 2 field
    assert abs(bhat[4, 0]) < 0.02 * bhat[0, 0]


def test_conventions_agree_on_coefficients(lattice):
    points, weights = lattice
    weighted = CovarianceModel(M=2)
    values = list(field_lattice_values(weighted, GRID, points, 60, seed=4))
    bhat = empirical_coef_table(values, 2, LAG_STEPS, points, weights, "weighted")
    # B_0(0) = 0.5 whichever convention generated the paths
    assert bhat[0, 0] == pytest.approx(0.5, abs=0.25)
    assert bhat[1, 0] > 0


@pytest.mark.parametrize("projection", ["harmonic", "binned"])
def test_white_noise_has_no_lagged_covariance(lattice, rng, projection):
    points, weights = lattice
    values = [rng.standard_normal((51, len(points))) for _ in range(60)]
    bhat = empirical_coef_table(values, 3, LAG_STEPS, points, weights, "raw", projection=projection)
    for l in range(4):
        assert bhat[l, 0] > 0
        assert numpy.all(numpy.abs(bhat[l, 1:]) < 0.2 * bhat[l, 0])


def test_projections_agree_on_degree_zero(lattice, model):
    points, weights = lattice
    values = list(field_lattice_values(model, GRID, points, 50, seed=12))
    harmonic = empirical_coef_table(values, 3, LAG_STEPS, points, weights)
    binned = empirical_coef_table(values, 3, LAG_STEPS, points, weights, projection="binned")
    numpy.testing.assert_allclose(harmonic[0], binned[0], rtol=1e-9)


def test_accepts_realizations(lattice, model):
    points, weights = lattice
    grid = TimeGrid(0.0, 10.0, 51)
    fields = [simulate_coefficients(model, grid, r) for r in spawn_generators(6, 50)]
    from_fields = empirical_coef_cov(fields, 1, LAG_STEPS, points=points, weights=weights)
    arrays = [numpy.asarray(v) for v in field_lattice_values(model, grid, points, 50, seed=6)]
    from_arrays = empirical_coef_cov(arrays, 1, LAG_STEPS, points=points, weights=weights)
    numpy.testing.assert_allclose(from_fields, from_arrays, rtol=1e-10, atol=1e-14)


def test_needs_enough_replicates(lattice, rng):
    points, weights = lattice
    values = [rng.standard_normal((51, len(points))) for _ in range(10)]
    with pytest.raises(ConfigError):
        empirical_coef_table(values, 2, LAG_STEPS, points, weights)


def test_lag_and_shape_checks(lattice, rng):
    points, weights = lattice
    accumulator = LatticeCovariance(points, weights, (0, 60))
    with pytest.raises(ConfigError):
        accumulator.add(rng.standard_normal((51, len(points))))
    accumulator = LatticeCovariance(points, weights, (0, 1))
    with pytest.raises(ConfigError):
        accumulator.add(rng.standard_normal((51, 3)))
    with pytest.raises(ConfigError):
        accumulator.kernel_coefficients(2)
    with pytest.raises(ConfigError):
        LatticeCovariance(points, weights, (0, -1))
    with pytest.raises(ConfigError):
        LatticeCovariance(points, weights[:-1])
    with pytest.raises(ConfigError):
        LatticeCovariance(points, weights, projection="spectral")
    accumulator = LatticeCovariance(points, weights, (0, 1), l_max=2)
    accumulator.add(rng.standard_normal((5, len(points))))
    with pytest.raises(ConfigError):
        accumulator.kernel_coefficients(3)
    with pytest.raises(ConfigError):
        accumulator.binned()


def test_default_lags_span_the_window(lattice, rng):
    points, weights = lattice
    accumulator = LatticeCovariance(points, weights)
    accumulator.add(rng.standard_normal((100, len(points))))
    assert accumulator.lag_steps == spanning_lag_steps(100) == list(range(100))
    assert accumulator.kernel_coefficients(5).shape == (6, 100)
    # a shorter replicate cannot supply the longest lags
    with pytest.raises(ConfigError):
        accumulator.add(rng.standard_normal((50, len(points))))


def test_binned_capacity(lattice, rng, monkeypatch):
    points, weights = lattice
    monkeypatch.setattr(fit, "MAX_BINNED_ENTRIES", 1000)
    accumulator = LatticeCovariance(points, weights, projection="binned")
    with pytest.raises(CapacityError):
        accumulator.add(rng.standard_normal((10, len(points))))


@pytest.mark.parametrize("projection", ["harmonic", "binned"])
def test_covariance_of_constant_field(lattice, projection):
    points, weights = lattice
    accumulator = LatticeCovariance(points, weights, (0, 1), l_max=3, projection=projection)
    accumulator.add(numpy.full((10, len(points)), 2.0))
    if projection == "binned":
        binned = accumulator.binned()
        occupied = accumulator.bin_mass > 0
        numpy.testing.assert_allclose(binned[:, occupied], 4.0)
    b = accumulator.kernel_coefficients(3)
    assert b[0, 0] == pytest.approx(4.0)
    numpy.testing.assert_allclose(b[1:, 0], 0.0, atol=0.05)


def test_noisy_fit_near_truth(lattice):
    points, weights = lattice
    truth = CovarianceModel(theta=1.0)
    values = field_lattice_values(truth, GRID, points, 200, seed=9)
    bhat = empirical_coef_table(values, 5, LAG_STEPS, points, weights)
    result = fit_theta(bhat, range(6), LAGS, truth)
    assert 0.5 <= result.theta_hat <= 2.0


@pytest.mark.parametrize("theta", [0.01, 1.0, 100.0])
def test_round_trip_within_factor_two(lattice, theta):
    points, weights = lattice
    grid = TimeGrid(0.0, 10.0, 100)
    truth = CovarianceModel(theta=theta)
    values = field_lattice_values(truth, grid, points, 500, seed=10)
    bhat = empirical_coef_table(values, 5, None, points, weights)
    assert bhat.shape == (6, 100)
    lags = numpy.arange(100) * (grid.nodes[1] - grid.nodes[0])
    result = fit_theta(bhat, range(6), lags, CovarianceModel())
    assert theta / 2 <= result.theta_hat <= 2 * theta
    assert result.variance_scale == pytest.approx(1.0, abs=0.5)
