"""Space-time K functions, the Poisson baselines and the nearest-neighbour G function.

A K grid holds values on (theta_i, t_j) node pairs: rows follow the angular
nodes and columns the temporal nodes.
"""

from dataclasses import dataclass, field as dataclass_field
import logging
from typing import Optional

import numpy
import scipy.integrate

from .covariance import scale_coefficient, spacetime_kernel
from .cox import pairwise_histogram
from .distances import AGGREGATION, INHIBITION, REGULAR, IntegrationSpec, classify_scale, clustering_index
from .manifold import cap_measure, legendre_eval, sample_uniform_sphere, sphere_measure
from .util import ConfigError, chunk_sizes, spawn_generators


logger = logging.getLogger(__name__)

DEFAULT_THETAS = numpy.linspace(0.0, numpy.pi, 15)
DEFAULT_TS = numpy.linspace(0.0, 10.0, 15)
BASELINES = ("selfconsistent", "uncorrected", "paper")
# "paper" names the uncorrected 2 t pi (1 - cos theta) baseline
UNCORRECTED = ("uncorrected", "paper")


@dataclass(eq=False)
class KGrid:
    thetas: numpy.ndarray
    ts: numpy.ndarray
    values: numpy.ndarray
    std_errors: Optional[numpy.ndarray] = None
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.thetas, self.ts = _check_nodes(self.thetas, self.ts)
        self.values = numpy.asarray(self.values, dtype=float)
        shape = (len(self.thetas), len(self.ts))
        if self.std_errors is None:
            self.std_errors = numpy.zeros(shape)
        self.std_errors = numpy.asarray(self.std_errors, dtype=float)
        if self.values.shape != shape or self.std_errors.shape != shape:
            raise ConfigError(
                f"grid values must be {shape}, got {self.values.shape} and {self.std_errors.shape}"
            )
        if numpy.any(self.std_errors < 0):
            raise ConfigError("standard errors must be non-negative")

    def same_nodes(self, other):
        return (
            self.values.shape == other.values.shape
            and numpy.allclose(self.thetas, other.thetas, rtol=0, atol=1e-12)
            and numpy.allclose(self.ts, other.ts, rtol=0, atol=1e-12)
        )

    def rows(self):
        yield ["theta"] + [repr(float(t)) for t in self.ts]
        for theta, row in zip(self.thetas, self.values):
            yield [theta] + list(row)


def _check_nodes(thetas, ts):
    thetas = numpy.asarray(thetas, dtype=float)
    ts = numpy.asarray(ts, dtype=float)
    if thetas.ndim != 1 or ts.ndim != 1 or not len(thetas) or not len(ts):
        raise ConfigError("grid nodes must be non-empty lists")
    if numpy.any(numpy.diff(thetas) <= 0) or numpy.any(numpy.diff(ts) <= 0):
        raise ConfigError("grid nodes must be strictly increasing")
    if thetas[0] < 0 or thetas[-1] > numpy.pi + 1e-12:
        raise ConfigError("angular nodes must lie in [0, pi]")
    if ts[0] < 0:
        raise ConfigError("temporal nodes must be non-negative")
    return numpy.minimum(thetas, numpy.pi), ts


def k_pois(t, theta):
    return t * cap_measure(theta)


def null_k(t, theta, T):
    """K of complete randomness with the temporal edge effect of a window of length T."""
    t = numpy.minimum(t, T)
    return cap_measure(theta) * (2 * t - t * t / T)


def baseline_grid(thetas=DEFAULT_THETAS, ts=DEFAULT_TS, T=10.0, convention="selfconsistent"):
    if convention not in BASELINES:
        raise ConfigError(f"baseline must be one of {BASELINES}, got {convention!r}")
    thetas, ts = _check_nodes(thetas, ts)
    tt, th = numpy.meshgrid(ts, thetas)
    if convention in UNCORRECTED:
        values = k_pois(tt, th)
    else:
        values = null_k(tt, th, T)
    return KGrid(thetas, ts, values, metadata={"baseline": convention, "T": T})


def _mc_k(log_g, thetas, ts, spec, control_variate):
    T = spec.time_length
    volume = T * sphere_measure()
    n_theta, n_t = len(thetas), len(ts)
    size = (n_theta + 1) * (n_t + 1)
    first = numpy.zeros(size)
    second = numpy.zeros(size)
    sizes = chunk_sizes(spec.samples, spec.chunk_size)
    for chunk, rng in zip(sizes, spawn_generators(spec.seed, len(sizes))):
        s = rng.uniform(0.0, T, chunk)
        u = rng.uniform(0.0, T, chunk)
        y = sample_uniform_sphere(rng, chunk)
        z = sample_uniform_sphere(rng, chunk)
        tau = numpy.abs(s - u)
        cosd = numpy.clip(numpy.sum(y * z, axis=1), -1.0, 1.0)
        g = numpy.exp(log_g(tau, cosd))
        v = volume * (g - 1 if control_variate else g)
        a = numpy.searchsorted(thetas, numpy.arccos(cosd), side="left")
        b = numpy.searchsorted(ts, tau, side="left")
        index = a * (n_t + 1) + b
        first += numpy.bincount(index, weights=v, minlength=size)
        second += numpy.bincount(index, weights=v * v, minlength=size)

    def _cumulative(x):
        x = x.reshape(n_theta + 1, n_t + 1)
        return numpy.cumsum(numpy.cumsum(x, axis=0), axis=1)[:n_theta, :n_t]

    n = spec.samples
    mean = _cumulative(first) / n
    variance = numpy.maximum(_cumulative(second) / n - mean * mean, 0.0) * n / (n - 1)
    values = mean
    if control_variate:
        tt, th = numpy.meshgrid(ts, thetas)
        values = null_k(tt, th, T) + mean
    return values, numpy.sqrt(variance / n)


def _refine(nodes, factor):
    pieces = [numpy.linspace(a, b, factor + 1)[:-1] for a, b in zip(nodes[:-1], nodes[1:])]
    pieces.append(nodes[-1:])
    return numpy.concatenate(pieces)


def _trapezoid_k(log_g, thetas, ts, spec):
    T = spec.time_length
    if ts[-1] > T:
        raise ConfigError(f"temporal nodes exceed the window length {T}")
    t_nodes = numpy.unique(numpy.concatenate([[0.0], ts]))
    u_nodes = numpy.unique(numpy.concatenate([numpy.cos(thetas), [1.0]]))
    t_factor = spec.nodes_per_axis
    u_factor = spec.angle_nodes or spec.nodes_per_axis
    tau = _refine(t_nodes, t_factor)
    u = _refine(u_nodes, u_factor)

    density = 2 * (T - tau) / T**2
    integrand = numpy.exp(log_g(tau[:, None], u[None, :])) * density[:, None] / 2
    over_tau = scipy.integrate.cumulative_trapezoid(integrand, tau, axis=0, initial=0)
    over_u = scipy.integrate.cumulative_trapezoid(over_tau, u, axis=1, initial=0)

    t_index = numpy.searchsorted(t_nodes, ts) * t_factor
    u_index = numpy.searchsorted(u_nodes, numpy.cos(thetas)) * u_factor
    # probability mass of {d <= theta_i, tau <= t_j}, weighted by g
    mass = over_u[t_index][:, [-1]] - over_u[t_index][:, u_index]
    return T * sphere_measure() * mass.T


def _k_grid(log_g, thetas, ts, spec, control_variate, metadata):
    thetas, ts = _check_nodes(thetas, ts)
    if spec.method == "monte-carlo":
        values, std_errors = _mc_k(log_g, thetas, ts, spec, control_variate)
    else:
        values, std_errors = _trapezoid_k(log_g, thetas, ts, spec), None
    metadata = dict(metadata, spec=spec.as_dict(), control_variate=control_variate)
    return KGrid(thetas, ts, values, std_errors, metadata)


def k_model(model, thetas=DEFAULT_THETAS, ts=DEFAULT_TS, spec=None, control_variate=True):
    spec = spec or IntegrationSpec(samples=10**5)

    def log_g(tau, u):
        return spacetime_kernel(model, tau, u)

    return _k_grid(log_g, thetas, ts, spec, control_variate, {"model": model.as_dict()})


def k_scale(model, q, thetas=DEFAULT_THETAS, ts=DEFAULT_TS, spec=None, extended=True, control_variate=True):
    """K with the single-scale pair correlation exp(b_q P_q) in place of g."""
    model.check_degree(q, extended)
    spec = spec or IntegrationSpec(samples=10**5)

    def log_g(tau, u):
        return scale_coefficient(model, q, tau, extended) * legendre_eval(q, u)

    metadata = {"model": model.as_dict(), "q": q}
    return _k_grid(log_g, thetas, ts, spec, control_variate, metadata)


def k_empirical(p, thetas=DEFAULT_THETAS, ts=DEFAULT_TS):
    n = len(p)
    if n < 2:
        raise ConfigError(f"K estimation needs at least 2 events, got {n}")
    thetas, ts = _check_nodes(thetas, ts)
    pairs = pairwise_histogram(p, thetas, ts)
    # pairs / (rho^2 |T| nu) with rho = n / (|T| nu)
    values = pairs * p.length * sphere_measure() / (n * n)
    return KGrid(thetas, ts, values, metadata={"count": n, "estimator": "empirical"})


def nearest_neighbour_distances(p, chunk=512):
    """Per event: the smallest geodesic distance and the smallest time gap to another event."""
    n = len(p)
    best = numpy.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dots = p.locations[start:stop] @ p.locations.T
        dots[numpy.arange(stop - start), numpy.arange(start, stop)] = -numpy.inf
        best[start:stop] = numpy.max(dots, axis=1)
    distances = numpy.arccos(numpy.clip(best, -1.0, 1.0))

    # times are sorted, so the nearest gap is to a neighbour in that order
    diffs = numpy.diff(p.times)
    gaps = numpy.full(n, numpy.inf)
    gaps[:-1] = diffs
    gaps[1:] = numpy.minimum(gaps[1:], diffs)
    return distances, gaps


def g_empirical(p, thetas=DEFAULT_THETAS, ts=DEFAULT_TS):
    n = len(p)
    if n < 2:
        raise ConfigError(f"G estimation needs at least 2 events, got {n}")
    thetas, ts = _check_nodes(thetas, ts)
    distances, gaps = nearest_neighbour_distances(p)
    near_space = (distances[:, None] <= thetas[None, :]).astype(float)
    near_time = (gaps[:, None] <= ts[None, :]).astype(float)
    values = near_space.T @ near_time / n
    return KGrid(thetas, ts, values, metadata={"count": n, "estimator": "nearest-neighbour"})


def _check_pair(kgrid, baseline):
    if not kgrid.same_nodes(baseline):
        raise ConfigError("K grids are on different nodes")


def k_difference(kgrid, baseline):
    _check_pair(kgrid, baseline)
    std_errors = numpy.sqrt(kgrid.std_errors**2 + baseline.std_errors**2)
    metadata = dict(kgrid.metadata, baseline=baseline.metadata.get("baseline"))
    return KGrid(kgrid.thetas, kgrid.ts, kgrid.values - baseline.values, std_errors, metadata)


def k_log_ratio_norm(kgrid, baseline, p=2):
    """L^p mean of log(K / K_baseline) over cells where both are positive."""
    _check_pair(kgrid, baseline)
    valid = (kgrid.values > 0) & (baseline.values > 0)
    if not numpy.any(valid):
        raise ConfigError("no cell has positive values in both grids")
    ratios = numpy.abs(numpy.log(kgrid.values[valid] / baseline.values[valid]))
    return float(numpy.mean(ratios**p) ** (1 / p))


def classify_from_k(kgrid, null_grid, z=3.0, fraction=0.8):
    _check_pair(kgrid, null_grid)
    diff = kgrid.values - null_grid.values
    sigma = numpy.sqrt(kgrid.std_errors**2 + null_grid.std_errors**2)
    # cells that are zero in both grids with no uncertainty carry no information
    informative = ~((kgrid.values == 0) & (null_grid.values == 0) & (sigma == 0))
    if not numpy.any(informative):
        return REGULAR
    above = (diff > z * sigma)[informative]
    below = (diff < -z * sigma)[informative]
    if numpy.mean(above) >= fraction and not numpy.any(below):
        return AGGREGATION
    if numpy.mean(below) >= fraction and not numpy.any(above):
        return INHIBITION
    return REGULAR


@dataclass
class ScaleReport:
    q: int
    shannon: float
    shannon_se: float
    renyi: dict = dataclass_field(default_factory=dict)
    k_label: Optional[str] = None
    label: str = REGULAR

    @property
    def clustering(self):
        return {h: clustering_index(d) for h, d in self.renyi.items()}

    def row(self, hs):
        row = [self.q, self.shannon, self.shannon_se]
        for h in hs:
            row.extend([self.renyi[h], self.clustering[h]])
        row.extend([self.k_label or "", self.label])
        return row


def report_header(hs):
    header = ["q", "shannon", "shannon_se"]
    for h in hs:
        header.extend([f"renyi_h{h:g}", f"ci_h{h:g}"])
    header.extend(["k_label", "label"])
    return header


def scale_reports(shannon_table, renyi_tables=(), k_labels=None, z=3.0, effect_floor=0.0):
    """One report per scale; the label comes from the Shannon distance."""
    k_labels = k_labels or {}
    labels = shannon_table.classify(z, effect_floor)
    reports = []
    for index, q in enumerate(shannon_table.scales):
        renyi = {}
        for table in renyi_tables:
            if q in table.scales:
                renyi[table.h] = float(table.values[table.scales.index(q)])
        report = ScaleReport(
            q,
            float(shannon_table.values[index]),
            float(shannon_table.std_errors[index]),
            renyi,
            k_labels.get(q),
            labels[index],
        )
        if report.k_label and report.k_label != report.label:
            logger.info("scale %d: distance says %s, K says %s", q, report.label, report.k_label)
        reports.append(report)
    return reports
