"""Cox point patterns on [t0, t1] x S^2 and counting primitives."""

from dataclasses import dataclass, field as dataclass_field
import logging

import numpy

from .datafiles import read_metadata, read_table, write_metadata, write_table
from .field import eval_intensity, field_max_bound
from .manifold import SpherePoint, as_points, cos_distance, sample_uniform_sphere, sphere_measure
from .util import CapacityError, ConfigError, chunk_sizes, sidecar_path


logger = logging.getLogger(__name__)

MAX_CANDIDATES = 10**7
CANDIDATE_CHUNK = 10**6
PAIR_CHUNK = 512
PATTERN_HEADER = ("t", "x", "y", "z")


@dataclass(frozen=True, eq=False)
class PointPattern:
    times: numpy.ndarray
    locations: numpy.ndarray
    t0: float = 0.0
    t1: float = 10.0
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        times = numpy.array(self.times, dtype=float).reshape(-1)
        locations = numpy.array(self.locations, dtype=float).reshape(-1, 3)
        if len(times) != len(locations):
            raise ConfigError(
                f"pattern has {len(times)} times but {len(locations)} locations"
            )
        if numpy.any(times < self.t0) or numpy.any(times > self.t1):
            raise ConfigError(f"event times outside the window [{self.t0}, {self.t1}]")
        if len(locations):
            norms = numpy.linalg.norm(locations, axis=1)
            if numpy.any(norms == 0):
                raise ConfigError("event location at the origin")
            locations = locations / norms[:, None]
        order = numpy.argsort(times, kind="stable")
        times, locations = times[order], locations[order]
        times.setflags(write=False)
        locations.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "locations", locations)

    def __len__(self):
        return len(self.times)

    @property
    def length(self):
        return self.t1 - self.t0

    @property
    def events(self):
        return [
            (float(t), SpherePoint.from_vector(z)) for t, z in zip(self.times, self.locations)
        ]


def sample_pattern(f, rng, max_candidates=MAX_CANDIDATES):
    """Thinning: dominate the intensity by field_max_bound and keep accepted candidates."""
    bound = field_max_bound(f)
    grid = f.grid
    expected = bound * sphere_measure() * grid.length
    if not numpy.isfinite(expected) or expected > max_candidates:
        raise CapacityError(
            f"expected {expected:.3g} thinning candidates, more than the cap "
            f"{max_candidates:.3g}; use a smaller variance_scale"
        )
    count = int(rng.poisson(expected))
    times = []
    locations = []
    clamped = 0
    for size in chunk_sizes(count, CANDIDATE_CHUNK):
        t = rng.uniform(grid.t0, grid.t1, size)
        z = sample_uniform_sphere(rng, size)
        intensity, c = eval_intensity(f, t, z, return_clamped=True)
        clamped += c
        keep = rng.uniform(0.0, 1.0, size) * bound < intensity
        times.append(t[keep])
        locations.append(z[keep])
    if clamped:
        logger.warning("%d thinning candidates had a clamped intensity", clamped)

    if times:
        times = numpy.concatenate(times)
        locations = numpy.concatenate(locations)
    else:
        times = numpy.zeros(0)
        locations = numpy.zeros((0, 3))
    logger.debug("kept %d of %d candidates", len(times), count)
    metadata = {"seed": f.seed, "model": f.model.as_dict(), "candidates": count}
    return PointPattern(times, locations, grid.t0, grid.t1, metadata)


def count_in(p, cap_center, theta, t_interval):
    if not 0 <= theta <= numpy.pi:
        raise ConfigError(f"cap radius must lie in [0, pi], got {theta}")
    a, b = t_interval
    if len(p) == 0:
        return 0
    inside = cos_distance(p.locations, as_points(cap_center)) >= numpy.cos(theta)
    if theta == numpy.pi:
        inside[:] = True
    in_time = (p.times >= a) & (p.times <= b)
    return int(numpy.count_nonzero(inside & in_time))


def _first_index(grid, values):
    # Index of the first grid node >= value; len(grid) when none is.
    return numpy.searchsorted(grid, values, side="left")


def pairwise_histogram(p, theta_grid, t_grid):
    """Ordered distinct pairs with distance <= theta_i and time gap <= t_j."""
    theta_grid = numpy.asarray(theta_grid, dtype=float)
    t_grid = numpy.asarray(t_grid, dtype=float)
    if numpy.any(numpy.diff(theta_grid) <= 0) or numpy.any(numpy.diff(t_grid) <= 0):
        raise ConfigError("histogram grids must be strictly increasing")

    n_theta, n_t = len(theta_grid), len(t_grid)
    counts = numpy.zeros((n_theta + 1, n_t + 1), dtype=numpy.int64)
    n = len(p)
    for start in range(0, n, PAIR_CHUNK):
        stop = min(start + PAIR_CHUNK, n)
        # pairs (i, j) with i in the chunk and j > i
        d = numpy.arccos(
            numpy.clip(p.locations[start:stop] @ p.locations.T, -1.0, 1.0)
        )
        gap = numpy.abs(p.times[start:stop, None] - p.times[None, :])
        i = numpy.arange(start, stop)[:, None]
        j = numpy.arange(n)[None, :]
        upper = j > i
        a = _first_index(theta_grid, d[upper])
        b = _first_index(t_grid, gap[upper])
        numpy.add.at(counts, (a, b), 1)

    cumulative = numpy.cumsum(numpy.cumsum(counts, axis=0), axis=1)
    return 2 * cumulative[:n_theta, :n_t]


def pattern_metadata(p):
    metadata = dict(p.metadata)
    metadata.update({"type": "pattern", "window": [p.t0, p.t1], "count": len(p)})
    return metadata


def write_pattern(p, path):
    write_table(path, PATTERN_HEADER, numpy.column_stack([p.times, p.locations]))
    write_metadata(sidecar_path(path), pattern_metadata(p))


def read_pattern(path):
    _, data = read_table(path, PATTERN_HEADER)
    metadata = read_metadata(path)
    t0, t1 = metadata.get("window", [0.0, 10.0])
    return PointPattern(data[:, 0], data[:, 1:4], t0, t1, metadata)
