import numpy
import pytest

from sphcox.covariance import CovarianceModel
from sphcox.datafiles import write_metadata, write_table
from sphcox.distances import (
    AGGREGATION,
    INHIBITION,
    REGULAR,
    DistanceTable,
    IntegrationSpec,
    classify_scale,
    clustering_index,
    distance_table,
    distance_tables,
    polyfit_smooth,
    polyval_smooth,
    read_distance_table,
    renyi_distance,
    renyi_profile,
    shannon_distance,
    shannon_estimate,
)
from sphcox.util import CapacityError, ConfigError, DegreeError, NumericalError


def mc(samples=1000, **kwargs):
    return IntegrationSpec("monte-carlo", samples, **kwargs)


def trapezoid(nodes=8, **kwargs):
    return IntegrationSpec("trapezoid", nodes_per_axis=nodes, **kwargs)


def test_spec_validation():
    with pytest.raises(ConfigError):
        IntegrationSpec("simpson")
    with pytest.raises(ConfigError):
        mc(samples=10)
    with pytest.raises(ConfigError):
        trapezoid(nodes=2)
    with pytest.raises(ConfigError):
        mc(n=4)
    assert mc(n=2).volume == pytest.approx((40 * numpy.pi) ** 2)


@pytest.mark.parametrize("method", ["monte-carlo", "trapezoid"])
def test_single_event_distances_vanish(regime_model, method):
    spec = IntegrationSpec(method, 100, n=1)
    for q in range(31):
        shannon, renyi = renyi_profile(regime_model, q, [1.5, 2.0], spec, extended=True)
        assert shannon.value == 0.0
        assert renyi[1.5].value == 0.0
        assert renyi[2.0].value == 0.0


def test_null_model_distances_vanish(null_model):
    for spec in (mc(), trapezoid()):
        for q in (0, 3, 17):
            value, se = shannon_distance(null_model, q, spec, extended=True)
            assert value == 0.0
            assert se == 0.0
            value, se = renyi_distance(null_model, q, 2.0, spec, extended=True)
            assert value == 0.0


def test_renyi_order_checks(model):
    with pytest.raises(ConfigError):
        renyi_distance(model, 0, 1.0, mc())
    with pytest.raises(ConfigError):
        renyi_distance(model, 0, 0.0, mc())
    with pytest.raises(ConfigError):
        renyi_distance(model, 0, -2.0, mc())


def test_degree_checks(model):
    with pytest.raises(DegreeError):
        shannon_distance(model, 6, mc())
    shannon_distance(model, 6, mc(), extended=True)
    with pytest.raises(DegreeError):
        shannon_distance(model, 65, mc(), extended=True)


def test_renyi_tends_to_shannon(model):
    spec = mc(10**4)
    for q in (0, 3):
        shannon, renyi = renyi_profile(model, q, [1.001], spec)
        scale = max(abs(shannon.value), 1e-6)
        assert abs(renyi[1.001].value - shannon.value) / scale < 0.02


def test_common_random_numbers(model):
    spec = mc(2000, seed=5)
    assert shannon_distance(model, 2, spec) == shannon_distance(model, 2, spec)
    assert shannon_distance(model, 2, spec) != shannon_distance(model, 2, mc(2000, seed=6))


def test_chunking_does_not_change_samples(model):
    a = shannon_estimate(model, 1, mc(3000, chunk_size=3000))
    b = shannon_estimate(model, 1, mc(3000, chunk_size=3000))
    assert a == b
    c = shannon_estimate(model, 1, mc(3000, chunk_size=1000))
    assert c.value == pytest.approx(a.value, abs=6 * a.std_error)


def test_parallel_matches_serial(model):
    spec = mc(4000, chunk_size=1000)
    assert shannon_estimate(model, 1, spec, workers=2) == shannon_estimate(model, 1, spec, workers=1)


def test_dependence_range_ordering_trapezoid():
    spec = trapezoid(16)
    models = [CovarianceModel(theta=t) for t in (0.01, 1.0, 100.0)]
    for q in (0, 1, 2):
        for h in (1.5, 2.0):
            values = [renyi_distance(m, q, h, spec)[0] for m in models]
            assert values[0] > values[1] > values[2] > 0
            ci = [clustering_index(v) for v in values]
            assert ci[0] > ci[1] > ci[2] > 1


def test_dependence_range_ordering_monte_carlo():
    spec = mc(4000)
    models = [CovarianceModel(theta=t) for t in (0.01, 1.0, 100.0)]
    estimates = [renyi_profile(m, 0, [2.0], spec)[1][2.0] for m in models]
    for a, b in zip(estimates, estimates[1:]):
        assert a.value - b.value > 3 * numpy.hypot(a.std_error, b.std_error)


def test_integrators_agree(model):
    for q in (0, 3):
        a = shannon_estimate(model, q, mc(10**5, chunk_size=25000))
        b = shannon_estimate(model, q, trapezoid(64))
        assert b.std_error < 0.01 * abs(b.value) + 1e-12
        assert abs(a.value - b.value) < 3 * numpy.hypot(a.std_error, b.std_error) + 1e-9


def test_trapezoid_error_shrinks_with_refinement(model):
    coarse = shannon_estimate(model, 1, trapezoid(16))
    fine = shannon_estimate(model, 1, trapezoid(32))
    assert coarse.std_error > 0
    assert 0 < fine.std_error < coarse.std_error
    assert trapezoid(16).coarsened().nodes_per_axis == 8
    assert trapezoid(5).coarsened().nodes_per_axis == 4
    assert trapezoid(8, angle_nodes=16).coarsened().angle_nodes == 8


def test_scales_split_at_large_sample_size(model):
    spec = mc(2 * 10**6, chunk_size=2 * 10**5, seed=3)
    estimates = {q: shannon_estimate(model, q, spec, extended=True) for q in (0, 1, 5, 8)}
    for q in (0, 1):
        assert estimates[q].value > 3 * estimates[q].std_error
    # finer scales stay positive but are small beside degree one
    for q in (5, 8):
        assert abs(estimates[q].value) < 0.2 * estimates[1].value
        assert abs(estimates[q].value) < 5 * estimates[q].std_error


def test_standard_error_shrinks(model):
    small = shannon_estimate(model, 0, mc(4000)).std_error
    large = shannon_estimate(model, 0, mc(16000)).std_error
    assert 0.4 < large / small < 0.6


def test_scale_decay(model):
    spec = trapezoid(16)
    values = distance_tables(model, range(11), spec).pop(0).values
    assert numpy.all(values[:5] > 0)
    assert values[0] > 10 * values[5]
    assert numpy.all(values[5:] < 0.1 * values[0])


def test_high_scales_are_indistinguishable_from_zero(model):
    spec = mc(10**4)
    for q in (5, 10, 20):
        value, se = shannon_distance(model, q, spec, extended=True)
        assert abs(value) < 4 * se


def test_third_order_distances(model):
    spec = trapezoid(8, n=3)
    values = [shannon_distance(model, q, spec)[0] for q in range(6)]
    assert all(v > 0 for v in values[:5])
    assert values[5] < 0.1 * values[0]
    second = shannon_distance(model, 0, trapezoid(8))[0]
    assert values[0] > second


def test_trapezoid_cost_cap(model):
    spec = IntegrationSpec("trapezoid", nodes_per_axis=40, n=3, max_evaluations=10**6)
    with pytest.raises(CapacityError):
        shannon_distance(model, 0, spec)


def test_raw_value_prefactor(model):
    spec = IntegrationSpec("monte-carlo", 100, n=1)
    estimate, renyi = renyi_profile(model, 2, [2.0], spec)
    assert estimate.raw_value == 0.0
    b0 = 0.0221049
    assert renyi[2.0].raw_value == pytest.approx(numpy.log(40 * numpy.pi) + b0 / 2, rel=1e-5)


def test_classify_scale():
    assert classify_scale(1.0, 0.1) == AGGREGATION
    assert classify_scale(-1.0, 0.1) == INHIBITION
    assert classify_scale(0.2, 0.1) == REGULAR
    assert classify_scale(0.5, 0.0, effect_floor=0.01, reference=100.0) == REGULAR
    assert classify_scale(0.0, 0.0) == REGULAR
    with pytest.raises(ConfigError):
        classify_scale(1.0, -0.1)


def test_polyfit_recovers_polynomial():
    xs = numpy.arange(31.0)
    coefficients = numpy.array([0.5, -0.1, 0.01, 1e-4, -2e-5, 3e-7])
    ys = polyval_smooth(coefficients, xs)
    fit = polyfit_smooth(xs, ys, 5)
    numpy.testing.assert_allclose(fit.coefficients, coefficients, rtol=1e-6, atol=1e-12)
    assert fit.residual_norm < 1e-10


def test_polyfit_errors():
    with pytest.raises(ConfigError):
        polyfit_smooth([0, 1, 2], [0, 1, 2], 5)
    with pytest.raises(NumericalError):
        polyfit_smooth(numpy.ones(10), numpy.arange(10.0), 3)


def test_distance_table_outputs(model, tmp_path):
    tables = distance_tables(model, range(6), trapezoid(16), hs=(1.5, 2.0))
    assert [t.name for t in tables] == ["shannon", "renyi-h1.5", "renyi-h2"]
    shannon, renyi = tables[0], tables[2]
    assert shannon.header == ["q", "value", "std_error", "raw_value"]
    assert renyi.header[-1] == "clustering_index"
    rows = list(renyi.rows())
    assert rows[0][-1] == pytest.approx(numpy.exp(rows[0][1]))
    assert shannon.smooth(5) is not None
    assert shannon.smooth(6) is None
    assert shannon.classify()[0] == AGGREGATION

    path = str(tmp_path / "renyi-h2.csv")
    write_table(path, renyi.header, renyi.rows())
    write_metadata(str(tmp_path / "renyi-h2.json"), renyi.metadata)
    back = read_distance_table(path)
    assert back.kind == "renyi"
    assert back.h == 2.0
    numpy.testing.assert_array_equal(back.values, renyi.values)


def test_distance_table_wrapper(model):
    table = distance_table(model, [0, 1], trapezoid(), kind="renyi", h=2.0)
    assert table.kind == "renyi"
    with pytest.raises(ConfigError):
        distance_table(model, [0], trapezoid(), kind="kl")


def test_distance_table_validation():
    with pytest.raises(ConfigError):
        DistanceTable([0, 1], [0.0], [0.0], [0.0])
    with pytest.raises(ConfigError):
        DistanceTable([0], [0.0], [-1.0], [0.0])
