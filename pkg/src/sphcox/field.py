"""Realizations of the Gaussian log-intensity on [t0, t1] x S^2.

A realization stores one coefficient path per Legendre degree on a time grid
plus a uniform random pole. Between grid nodes the paths are interpolated
linearly, so the field can be evaluated at any time in the window.
"""

from dataclasses import dataclass, field as dataclass_field
import logging

import numpy

from .covariance import CovarianceModel, MAX_JITTER, temporal_factor
from .datafiles import read_metadata, read_table, write_metadata, write_table
from .manifold import SpherePoint, as_points, legendre_table, sample_uniform_sphere, sphere_grid
from .util import ConfigError, sidecar_path


logger = logging.getLogger(__name__)

CLAMP = 700.0
TIME_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    t1: float = 10.0
    n: int = 100

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ConfigError(f"time window needs t0 < t1, got [{self.t0}, {self.t1}]")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"time grid needs at least 2 nodes, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def nodes(self):
        return numpy.linspace(self.t0, self.t1, self.n)

    @property
    def length(self):
        return self.t1 - self.t0

    def check(self, t):
        t = numpy.asarray(t, dtype=float)
        if numpy.any(t < self.t0 - TIME_TOLERANCE) or numpy.any(
            t > self.t1 + TIME_TOLERANCE
        ):
            raise ConfigError(f"time outside the window [{self.t0}, {self.t1}]")
        return numpy.clip(t, self.t0, self.t1)

    def as_dict(self):
        return {"t0": self.t0, "t1": self.t1, "n": self.n}


@dataclass(frozen=True, eq=False)
class FieldRealization:
    model: CovarianceModel
    grid: TimeGrid
    coeffs: numpy.ndarray
    pole: SpherePoint
    seed: object = None
    jitter: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        coeffs = numpy.array(self.coeffs, dtype=float)
        if coeffs.shape != (self.model.M + 1, self.grid.n):
            raise ConfigError(
                f"coefficient table must be {(self.model.M + 1, self.grid.n)}, "
                f"got {coeffs.shape}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def interpolated(self, t):
        """Coefficient paths at times t, shape (M+1, *t.shape)."""
        t = self.grid.check(t)
        nodes = self.grid.nodes
        flat = t.reshape(-1)
        rows = [numpy.interp(flat, nodes, row) for row in self.coeffs]
        return numpy.stack(rows).reshape((len(rows),) + t.shape)


def simulate_coefficients(model, grid, rng, seed=None, max_jitter=MAX_JITTER):
    """One realization: Gaussian paths V_0..V_M on the grid and a uniform pole.

    V_l has covariance (2l+1) b_l(tau) (see path_covariance), so averaging
    over the pole gives the field covariance sum_l b_l(tau) P_l(u). Under the
    default weighted convention Var V_0 = 1 / (8 pi), about 0.0398; under raw
    it is B_0(0) = 0.5.
    """
    nodes = grid.nodes
    coeffs = numpy.empty((model.M + 1, grid.n))
    jitter = {}
    for l in range(model.M + 1):
        factor, jitter[l] = temporal_factor(model, l, nodes, max_jitter)
        coeffs[l] = factor @ rng.standard_normal(grid.n)
    pole = sample_uniform_sphere(rng)
    return FieldRealization(model, grid, coeffs, pole, seed, jitter)


def constant_field(model, grid, values, pole=None):
    """Field whose degree-l path is the constant values[l]."""
    values = numpy.asarray(values, dtype=float)
    coeffs = numpy.repeat(values[:, None], grid.n, axis=1)
    return FieldRealization(model, grid, coeffs, pole or SpherePoint(0.0, 0.0, 1.0))


def eval_field(f, t, z):
    """Log-intensity at (t, z); t and z broadcast elementwise."""
    cosd = numpy.clip(as_points(z) @ f.pole.as_array(), -1.0, 1.0)
    t, cosd = numpy.broadcast_arrays(numpy.asarray(t, dtype=float), cosd)
    v = f.interpolated(t)
    p = legendre_table(f.model.M, cosd)
    value = numpy.sum(v * p, axis=0)
    if numpy.ndim(value) == 0:
        return float(value)
    return value


def eval_field_grid(f, times, points):
    """Field on a time x sphere lattice, shape (len(times), len(points))."""
    v = f.interpolated(numpy.asarray(times, dtype=float))
    cosd = numpy.clip(as_points(points) @ f.pole.as_array(), -1.0, 1.0)
    p = legendre_table(f.model.M, cosd)
    return v.T @ p


def clamp_field(values):
    values = numpy.asarray(values, dtype=float)
    clamped = int(numpy.count_nonzero(numpy.abs(values) > CLAMP))
    if clamped:
        logger.warning("clamped %d field values to +-%g", clamped, CLAMP)
    return numpy.clip(values, -CLAMP, CLAMP), clamped


def eval_intensity(f, t, z, return_clamped=False):
    values, clamped = clamp_field(eval_field(f, t, z))
    intensity = numpy.exp(values)
    if numpy.ndim(intensity) == 0:
        intensity = float(intensity)
    if return_clamped:
        return intensity, clamped
    return intensity


def field_max_bound(f):
    """exp(sum_l max_k |V_l(t_k)|), an upper bound on the intensity."""
    total = float(numpy.sum(numpy.max(numpy.abs(f.coeffs), axis=1)))
    return float(numpy.exp(min(total, CLAMP)))


FIELD_HEADER = ("l", "t", "value")


def field_rows(f):
    nodes = f.grid.nodes
    for l, row in enumerate(f.coeffs):
        for t, value in zip(nodes, row):
            yield (l, t, value)


SNAPSHOT_HEADER = ("t", "lat", "lon", "value")


def snapshot_times(grid, times=None, count=4):
    """Checked snapshot times; evenly spaced over the window when times is None."""
    if times is None:
        return numpy.linspace(grid.t0, grid.t1, count)
    try:
        times = numpy.asarray(times, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"snapshot times must be numbers, got {times!r}")
    return grid.check(times)


def snapshot_rows(f, times, n_lat=48, n_lon=96):
    """Log-intensity on a Gaussian lattice at each time, as (t, lat, lon, value) rows.

    Latitude and longitude are in degrees, longitude in [0, 360).
    """
    points, _ = sphere_grid(n_lat, n_lon)
    times = f.grid.check(numpy.asarray(times, dtype=float).reshape(-1))
    values = eval_field_grid(f, times, points)
    lat = numpy.degrees(numpy.arcsin(numpy.clip(points[:, 2], -1.0, 1.0)))
    lon = numpy.degrees(numpy.arctan2(points[:, 1], points[:, 0])) % 360.0
    for t, row in zip(times, values):
        for la, lo, value in zip(lat, lon, row):
            yield (t, la, lo, value)


def field_metadata(f):
    return {
        "type": "field",
        "model": f.model.as_dict(),
        "grid": f.grid.as_dict(),
        "pole": [f.pole.x, f.pole.y, f.pole.z],
        "seed": f.seed,
        "jitter": {str(l): j for l, j in f.jitter.items()},
    }


def field_from_table(data, metadata):
    """Rebuild a realization from (l, t, value) rows and its sidecar."""
    try:
        model = CovarianceModel(**metadata["model"])
        grid = TimeGrid(**metadata["grid"])
        pole = SpherePoint.from_vector(metadata["pole"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"field sidecar is missing {e}")
    coeffs = numpy.zeros((model.M + 1, grid.n))
    counts = numpy.zeros_like(coeffs)
    nodes = grid.nodes
    for l, t, value in data:
        k = int(numpy.argmin(numpy.abs(nodes - t)))
        coeffs[int(l), k] = value
        counts[int(l), k] += 1
    if not numpy.all(counts == 1):
        raise ConfigError("field table does not cover every (degree, node) once")
    return FieldRealization(model, grid, coeffs, pole, metadata.get("seed"))


def dump_field(f, path):
    write_table(path, FIELD_HEADER, field_rows(f))
    write_metadata(sidecar_path(path), field_metadata(f))


def load_field(path):
    _, data = read_table(path, FIELD_HEADER)
    return field_from_table(data, read_metadata(path))
