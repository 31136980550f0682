"""Per-scale Shannon and Renyi distances to the Poisson baseline.

At scale q and order n the integrand depends on the configuration through

    s = S / 2 = sum_{i < j} b_q(t_i - t_j) P_q(cos d(z_i, z_j))

with w = exp(s) = rho_q^(n) / rho_q^n. Distances are taken against the
probability measure proportional to rho_q^(n):

    D^S   = E[w s] / E[w]
    D^R_h = log(E[w^h] / E[w]) / (h - 1)

where E is the uniform average over window^n x (S^2)^n. The literal
unnormalized integrals are reported as raw_value. Monte Carlo standard
errors use the delta method; the trapezoid rule reports its change against
the same rule on half as many nodes.
"""

from dataclasses import dataclass, field as dataclass_field, replace
import logging
from typing import NamedTuple, Optional

import numpy
from numpy.polynomial.legendre import leggauss
import numpy.polynomial.polynomial as npoly
import scipy.special
from tqdm import tqdm

from .covariance import scale_coefficient
from .datafiles import read_metadata, read_table
from .manifold import legendre_eval, sample_uniform_sphere, sphere_measure
from .util import (
    CapacityError,
    ConfigError,
    NumericalError,
    chunk_sizes,
    parallel_map,
    spawn_generators,
)


logger = logging.getLogger(__name__)

METHODS = ("monte-carlo", "trapezoid")
MAX_EVALUATIONS = 10**8
AGGREGATION = "aggregation"
REGULAR = "regular"
INHIBITION = "inhibition"


@dataclass(frozen=True)
class IntegrationSpec:
    method: str = "monte-carlo"
    samples: int = 1000
    nodes_per_axis: int = 8
    angle_nodes: Optional[int] = None
    seed: int = 0
    n: int = 2
    time_length: float = 10.0
    chunk_size: int = 10000
    max_evaluations: int = MAX_EVALUATIONS

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"integration method must be one of {METHODS}, got {self.method!r}")
        if self.n not in (1, 2, 3):
            raise ConfigError(f"distance order n must be 1, 2 or 3, got {self.n}")
        if self.method == "monte-carlo" and self.samples < 100:
            raise ConfigError(f"Monte Carlo needs at least 100 samples, got {self.samples}")
        if self.method == "trapezoid" and self.nodes_per_axis < 4:
            raise ConfigError(
                f"trapezoid needs at least 4 nodes per axis, got {self.nodes_per_axis}"
            )
        if self.angle_nodes is not None and self.angle_nodes < 4:
            raise ConfigError(f"angle_nodes must be at least 4, got {self.angle_nodes}")
        if not self.time_length > 0:
            raise ConfigError(f"time_length must be positive, got {self.time_length}")
        if self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be positive, got {self.chunk_size}")

    @property
    def volume(self):
        return (self.time_length * sphere_measure()) ** self.n

    def coarsened(self):
        """The same rule on about half as many nodes per axis."""
        nodes = max(4, (self.nodes_per_axis + 1) // 2)
        angle = None if self.angle_nodes is None else max(4, self.angle_nodes // 2)
        return replace(self, nodes_per_axis=nodes, angle_nodes=angle)

    def as_dict(self):
        return {
            "method": self.method,
            "samples": self.samples,
            "nodes_per_axis": self.nodes_per_axis,
            "angle_nodes": self.angle_nodes,
            "seed": self.seed,
            "n": self.n,
            "time_length": self.time_length,
            "chunk_size": self.chunk_size,
        }


class DistanceEstimate(NamedTuple):
    value: float
    std_error: float
    raw_value: float


def _half_pair_sum(model, q, times, locations, extended):
    """s for each sample row; times (m, n), locations (m, n, 3)."""
    m, n = times.shape
    s = numpy.zeros(m)
    for i in range(n):
        for j in range(i + 1, n):
            lag = times[:, i] - times[:, j]
            cosd = numpy.clip(
                numpy.sum(locations[:, i] * locations[:, j], axis=1), -1.0, 1.0
            )
            s += scale_coefficient(model, q, lag, extended) * legendre_eval(q, cosd)
    return s


def _mc_chunk(args):
    model, q, extended, n, time_length, size, rng = args
    times = rng.uniform(0.0, time_length, (size, n))
    locations = sample_uniform_sphere(rng, size * n).reshape(size, n, 3)
    return _half_pair_sum(model, q, times, locations, extended)


def _mc_samples(model, q, spec, extended, workers):
    sizes = chunk_sizes(spec.samples, spec.chunk_size)
    rngs = spawn_generators(spec.seed, len(sizes))
    args = [
        (model, q, extended, spec.n, spec.time_length, size, rng)
        for size, rng in zip(sizes, rngs)
    ]
    return numpy.concatenate(parallel_map(_mc_chunk, args, workers))


def _trapezoid_weights(nodes):
    h = numpy.diff(nodes)
    w = numpy.zeros(len(nodes))
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _trapezoid_blocks(model, q, spec, extended):
    """Yields (s, weight) blocks covering the reduced integration domain."""
    if spec.n == 1:
        yield numpy.zeros(1), numpy.ones(1)
        return

    T = spec.time_length
    n_t = spec.nodes_per_axis
    # Gauss-Legendre in cos-angle keeps E[P_q(u)] = 0 exact up to degree 2 n_a - 1
    n_a = spec.angle_nodes or max(spec.nodes_per_axis, q + 2)
    cost = n_t * n_a if spec.n == 2 else n_t**2 * n_a**3
    if cost > spec.max_evaluations:
        raise CapacityError(
            f"trapezoid rule needs {cost:.3g} evaluations, more than {spec.max_evaluations:.3g}"
        )
    logger.info("trapezoid rule q=%d n=%d: %d evaluations", q, spec.n, cost)

    u, wu = leggauss(n_a)
    wu = wu / 2
    pu = legendre_eval(q, u)

    if spec.n == 2:
        # lag tau = |t1 - t2| has density 2 (T - tau) / T^2 on [0, T]
        tau = numpy.linspace(0.0, T, n_t)
        wt = _trapezoid_weights(tau) * 2 * (T - tau) / T**2
        b = scale_coefficient(model, q, tau, extended)
        yield numpy.outer(b, pu).ravel(), numpy.outer(wt, wu).ravel()
        return

    # (a, b) = (t1 - t2, t1 - t3); angles parameterized by u12, u13 and the
    # azimuth phi between the two great circles through z1.
    lags = numpy.linspace(-T, T, n_t)
    wl = _trapezoid_weights(lags)
    phi = 2 * numpy.pi * numpy.arange(n_a) / n_a
    u12, u13, ph = numpy.meshgrid(u, u, phi, indexing="ij")
    u23 = u12 * u13 + numpy.sqrt(1 - u12**2) * numpy.sqrt(1 - u13**2) * numpy.cos(ph)
    p23 = legendre_eval(q, numpy.clip(u23, -1.0, 1.0))
    w_space = (wu[:, None, None] * wu[None, :, None] / n_a) * numpy.ones_like(p23)
    p12 = pu[:, None, None]
    p13 = pu[None, :, None]

    for ia, a in enumerate(lags):
        for ib, bb in enumerate(lags):
            span = max(0.0, a, bb) - min(0.0, a, bb)
            density = max(T - span, 0.0) / T**3
            weight = wl[ia] * wl[ib] * density
            if weight == 0:
                continue
            s = (
                scale_coefficient(model, q, a, extended) * p12
                + scale_coefficient(model, q, bb, extended) * p13
                + scale_coefficient(model, q, bb - a, extended) * p23
            )
            yield s.ravel(), (weight * w_space).ravel()


class _Moments:
    """Streaming E[w s], log E[w] and log E[w^h] over weighted blocks."""

    def __init__(self, hs):
        self.hs = list(hs)
        self.shifts = []
        self.first = []
        self.first_s = []
        self.powers = {h: [] for h in self.hs}
        self.total_weight = 0.0
        # an identically zero integrand has distances exactly 0
        self.degenerate = True

    def add(self, s, weight):
        keep = weight > 0
        s, weight = s[keep], weight[keep]
        if not len(s):
            return
        if numpy.any(s):
            self.degenerate = False
        shift = float(numpy.max(s))
        e = weight * numpy.exp(s - shift)
        self.shifts.append(shift)
        self.first.append(float(numpy.sum(e)))
        self.first_s.append(float(numpy.sum(e * s)))
        for h in self.hs:
            self.powers[h].append(scipy.special.logsumexp(h * s, b=weight))
        self.total_weight += float(numpy.sum(weight))

    def shannon(self):
        if self.degenerate:
            return 0.0
        shifts = numpy.array(self.shifts)
        scale = numpy.exp(shifts - shifts.max())
        return float(numpy.dot(self.first_s, scale) / numpy.dot(self.first, scale))

    def log_mean_w(self):
        shifts = numpy.array(self.shifts)
        scale = numpy.exp(shifts - shifts.max())
        return float(
            numpy.log(numpy.dot(self.first, scale))
            + shifts.max()
            - numpy.log(self.total_weight)
        )

    def log_mean_wh(self, h):
        return float(scipy.special.logsumexp(self.powers[h]) - numpy.log(self.total_weight))

    def raw_shannon(self, log_prefactor):
        return float(numpy.exp(log_prefactor + self.log_mean_w()) * self.shannon())

    def raw_renyi(self, h, log_prefactor):
        return (log_prefactor + self.log_mean_wh(h)) / (h - 1)

    def renyi(self, h):
        if self.degenerate:
            return 0.0
        return (self.log_mean_wh(h) - self.log_mean_w()) / (h - 1)


def _mc_standard_errors(s, shannon, hs):
    n = len(s)
    w = numpy.exp(s - numpy.max(s))
    mean_w = numpy.mean(w)
    se_shannon = float(numpy.std(w * (s - shannon) / mean_w, ddof=1) / numpy.sqrt(n))
    se_renyi = {}
    for h in hs:
        wh = numpy.exp(h * (s - numpy.max(s)))
        residual = (wh / numpy.mean(wh) - w / mean_w) / (h - 1)
        se_renyi[h] = float(numpy.std(residual, ddof=1) / numpy.sqrt(n))
    return se_shannon, se_renyi


def _check_orders(hs):
    for h in hs:
        if h == 1:
            raise ConfigError("order h = 1 is the Shannon limit; use shannon_distance")
        if not h > 0:
            raise ConfigError(f"Renyi order must be positive, got {h}")


def renyi_profile(model, q, h_list, spec, extended=False, workers=1):
    """Shannon and Renyi estimates at scale q from one shared evaluation.

    Returns (shannon, {h: renyi}) as DistanceEstimate values.
    """
    _check_orders(h_list)
    model.check_degree(q, extended)
    moments = _Moments(h_list)
    if spec.method == "monte-carlo":
        s = _mc_samples(model, q, spec, extended, workers)
        moments.add(s, numpy.full(len(s), 1.0 / len(s)))
    else:
        s = None
        for block in _trapezoid_blocks(model, q, spec, extended):
            moments.add(*block)
        coarse = _Moments(h_list)
        for block in _trapezoid_blocks(model, q, spec.coarsened(), extended):
            coarse.add(*block)

    shannon = moments.shannon()
    if s is not None:
        se_shannon, se_renyi = _mc_standard_errors(s, shannon, h_list)
    else:
        # discretization error, taken as the change from the coarser rule
        se_shannon = abs(shannon - coarse.shannon())
        se_renyi = {h: abs(moments.renyi(h) - coarse.renyi(h)) for h in h_list}

    log_prefactor = numpy.log(spec.volume) + spec.n * scale_coefficient(
        model, q, 0.0, extended
    ) / 2
    if not numpy.isfinite(shannon):
        raise NumericalError(f"non-finite distance at scale {q}")
    result = DistanceEstimate(shannon, se_shannon, moments.raw_shannon(log_prefactor))
    renyi = {
        h: DistanceEstimate(
            moments.renyi(h), se_renyi[h], moments.raw_renyi(h, log_prefactor)
        )
        for h in h_list
    }
    return result, renyi


def shannon_estimate(model, q, spec, extended=False, workers=1):
    return renyi_profile(model, q, [], spec, extended, workers)[0]


def renyi_estimate(model, q, h, spec, extended=False, workers=1):
    return renyi_profile(model, q, [h], spec, extended, workers)[1][h]


def shannon_distance(model, q, spec, extended=False, workers=1):
    estimate = shannon_estimate(model, q, spec, extended, workers)
    return estimate.value, estimate.std_error


def renyi_distance(model, q, h, spec, extended=False, workers=1):
    estimate = renyi_estimate(model, q, h, spec, extended, workers)
    return estimate.value, estimate.std_error


def clustering_index(d):
    return float(numpy.exp(d))


def classify_scale(value, std_error, z=3.0, effect_floor=0.0, reference=0.0):
    """Sign test of a distance against its standard error.

    Values within effect_floor * reference of zero count as regular.
    """
    if std_error < 0:
        raise ConfigError(f"standard error must be non-negative, got {std_error}")
    if abs(value) <= effect_floor * abs(reference):
        return REGULAR
    if value > z * std_error:
        return AGGREGATION
    if value < -z * std_error:
        return INHIBITION
    return REGULAR


class PolyFit(NamedTuple):
    coefficients: numpy.ndarray
    residual_norm: float


def polyfit_smooth(xs, ys, degree=5):
    """Least-squares polynomial, coefficients in increasing order."""
    xs = numpy.asarray(xs, dtype=float)
    ys = numpy.asarray(ys, dtype=float)
    if len(xs) != len(ys):
        raise ConfigError(f"got {len(xs)} abscissae and {len(ys)} values")
    if len(xs) < degree + 1:
        raise ConfigError(f"degree {degree} fit needs {degree + 1} points, got {len(xs)}")
    design = numpy.vander(xs, degree + 1, increasing=True)
    scale = numpy.linalg.norm(design, axis=0)
    scale[scale == 0] = 1
    scaled = design / scale
    if numpy.linalg.matrix_rank(scaled) < degree + 1:
        raise NumericalError(f"rank-deficient degree {degree} fit")
    coefficients, _, _, _ = numpy.linalg.lstsq(scaled, ys, rcond=None)
    coefficients = coefficients / scale
    residual = float(numpy.linalg.norm(design @ coefficients - ys))
    return PolyFit(coefficients, residual)


def polyval_smooth(coefficients, x):
    return npoly.polyval(x, coefficients)


@dataclass(eq=False)
class DistanceTable:
    scales: list
    values: numpy.ndarray
    std_errors: numpy.ndarray
    raw_values: numpy.ndarray
    kind: str = "shannon"
    h: Optional[float] = None
    metadata: dict = dataclass_field(default_factory=dict)
    smoothing: Optional[PolyFit] = None

    def __post_init__(self):
        self.scales = [int(q) for q in self.scales]
        self.values = numpy.asarray(self.values, dtype=float)
        self.std_errors = numpy.asarray(self.std_errors, dtype=float)
        self.raw_values = numpy.asarray(self.raw_values, dtype=float)
        lengths = {len(self.scales), len(self.values), len(self.std_errors), len(self.raw_values)}
        if len(lengths) != 1:
            raise ConfigError("distance table columns have different lengths")
        if numpy.any(self.std_errors < 0):
            raise ConfigError("standard errors must be non-negative")

    @property
    def name(self):
        if self.kind == "shannon":
            return "shannon"
        return f"renyi-h{self.h:g}"

    @property
    def header(self):
        header = ["q", "value", "std_error", "raw_value"]
        if self.kind == "renyi":
            header.append("clustering_index")
        return header

    def rows(self):
        for q, v, se, raw in zip(self.scales, self.values, self.std_errors, self.raw_values):
            row = [q, v, se, raw]
            if self.kind == "renyi":
                row.append(clustering_index(v))
            yield row

    def smooth(self, degree=5):
        if len(self.scales) < degree + 1:
            logger.info("skipping smoothing: %d scales", len(self.scales))
            return None
        self.smoothing = polyfit_smooth(self.scales, self.values, degree)
        return self.smoothing

    def classify(self, z=3.0, effect_floor=0.0):
        reference = float(numpy.max(numpy.abs(self.values))) if len(self.values) else 0.0
        return [
            classify_scale(v, se, z, effect_floor, reference)
            for v, se in zip(self.values, self.std_errors)
        ]


def distance_tables(model, scales, spec, hs=(), extended=True, workers=1, progress=False):
    """Shannon table plus one Renyi table per order, sharing evaluations per scale."""
    _check_orders(hs)
    shannon = []
    renyi = {h: [] for h in hs}
    for q in tqdm(scales, desc="scales", disable=not progress):
        s, r = renyi_profile(model, q, hs, spec, extended, workers)
        shannon.append(s)
        for h in hs:
            renyi[h].append(r[h])

    metadata = {"model": model.as_dict(), "spec": spec.as_dict(), "extended": extended}

    def _table(estimates, kind, h=None):
        return DistanceTable(
            scales,
            [e.value for e in estimates],
            [e.std_error for e in estimates],
            [e.raw_value for e in estimates],
            kind,
            h,
            dict(metadata, kind=kind, h=h),
        )

    tables = [_table(shannon, "shannon")]
    tables.extend(_table(renyi[h], "renyi", h) for h in hs)
    return tables


def distance_table(model, scales, spec, kind="shannon", h=None, extended=True, workers=1):
    if kind == "shannon":
        return distance_tables(model, scales, spec, (), extended, workers)[0]
    if kind == "renyi":
        return distance_tables(model, scales, spec, (h,), extended, workers)[1]
    raise ConfigError(f"distance kind must be shannon or renyi, got {kind!r}")


def read_distance_table(path):
    header, data = read_table(path, ("q", "value", "std_error", "raw_value"))
    metadata = read_metadata(path)
    kind = metadata.get("kind") or ("renyi" if "clustering_index" in header else "shannon")
    return DistanceTable(
        data[:, 0].astype(int),
        data[:, 1],
        data[:, 2],
        data[:, 3],
        kind,
        metadata.get("h"),
        metadata,
    )
