"""Points on the unit sphere and the zonal polynomials used for isotropic kernels."""

from dataclasses import dataclass
import math

import numpy
from numpy.polynomial.legendre import leggauss
import scipy.special

from .util import ConfigError, DegreeError


MAX_DEGREE = 64
UNIT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SpherePoint:
    x: float
    y: float
    z: float

    def __post_init__(self):
        norm = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(norm) or norm == 0:
            raise ConfigError(f"cannot place ({self.x}, {self.y}, {self.z}) on the sphere")
        if abs(norm - 1) > UNIT_TOLERANCE:
            object.__setattr__(self, "x", self.x / norm)
            object.__setattr__(self, "y", self.y / norm)
            object.__setattr__(self, "z", self.z / norm)

    @classmethod
    def from_vector(cls, vector):
        x, y, z = (float(c) for c in vector)
        return cls(x, y, z)

    @classmethod
    def from_angles(cls, colatitude, longitude):
        s = math.sin(colatitude)
        return cls(s * math.cos(longitude), s * math.sin(longitude), math.cos(colatitude))

    def as_array(self):
        return numpy.array([self.x, self.y, self.z])


NORTH_POLE = SpherePoint(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class JacobiParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > -1 and self.beta > -1):
            raise ConfigError(
                f"Jacobi parameters must exceed -1, got alpha={self.alpha}, beta={self.beta}"
            )


def as_points(points):
    """Coerce a SpherePoint, a (3,) vector or an (..., 3) array into an array."""
    if isinstance(points, SpherePoint):
        return points.as_array()
    points = numpy.asarray(points, dtype=float)
    if points.shape[-1:] != (3,):
        raise ConfigError(f"expected points with a trailing axis of 3, got {points.shape}")
    return points


def _check_degree(l, max_degree):
    if int(l) != l or l < 0:
        raise DegreeError(f"degree must be a non-negative integer, got {l}")
    if l > max_degree:
        raise DegreeError(f"degree {l} exceeds the evaluation limit {max_degree}")


def legendre_eval(l, u, max_degree=MAX_DEGREE):
    """P_l(u) by the three-term recurrence."""
    _check_degree(l, max_degree)
    u = numpy.asarray(u, dtype=float)
    prev = numpy.ones_like(u)
    if l == 0:
        return prev
    cur = u.copy()
    for k in range(1, int(l)):
        prev, cur = cur, ((2 * k + 1) * u * cur - k * prev) / (k + 1)
    return cur


def legendre_table(max_l, u, max_degree=MAX_DEGREE):
    """Rows P_0(u) .. P_max_l(u), shape (max_l + 1, *u.shape)."""
    _check_degree(max_l, max_degree)
    u = numpy.asarray(u, dtype=float)
    table = numpy.empty((int(max_l) + 1,) + u.shape)
    table[0] = 1
    if max_l >= 1:
        table[1] = u
    for k in range(1, int(max_l)):
        table[k + 1] = ((2 * k + 1) * u * table[k] - k * table[k - 1]) / (k + 1)
    return table


def real_harmonics(max_l, points):
    """Real orthonormal spherical harmonics up to degree max_l.

    Returns (table, degrees): table has one row per harmonic, shape
    ((max_l + 1)^2, len(points)), and degrees[k] is the degree of row k.
    For each degree the rows satisfy the addition theorem
    sum_m Y_lm(x) Y_lm(y) = (2l + 1) / (4 pi) P_l(x . y).
    """
    _check_degree(max_l, MAX_DEGREE)
    points = as_points(points).reshape(-1, 3)
    z = numpy.clip(points[:, 2], -1.0, 1.0)
    phi = numpy.arctan2(points[:, 1], points[:, 0])
    rows = []
    degrees = []
    for l in range(int(max_l) + 1):
        for m in range(l + 1):
            norm = math.sqrt(
                (2 * l + 1) / (4 * math.pi) * math.exp(math.lgamma(l - m + 1) - math.lgamma(l + m + 1))
            )
            p = norm * scipy.special.lpmv(m, l, z)
            if m == 0:
                rows.append(p)
                degrees.append(l)
                continue
            rows.append(math.sqrt(2) * p * numpy.cos(m * phi))
            rows.append(math.sqrt(2) * p * numpy.sin(m * phi))
            degrees.extend((l, l))
    return numpy.stack(rows), numpy.array(degrees)


def jacobi_eval(params, n, u, max_degree=MAX_DEGREE):
    """P_n^(alpha, beta)(u); Legendre polynomials are the alpha = beta = 0 case."""
    _check_degree(n, max_degree)
    a, b = params.alpha, params.beta
    u = numpy.asarray(u, dtype=float)
    prev = numpy.ones_like(u)
    if n == 0:
        return prev
    cur = (a + 1) + (a + b + 2) * (u - 1) / 2
    for k in range(2, int(n) + 1):
        s = 2 * k + a + b
        c1 = 2 * k * (k + a + b) * (s - 2)
        c2 = (s - 1) * (s * (s - 2) * u + a * a - b * b)
        c3 = 2 * (k + a - 1) * (k + b - 1) * s
        prev, cur = cur, (c2 * cur - c3 * prev) / c1
    return cur


def geodesic_distance(a, b):
    """Great-circle distance in [0, pi]; broadcasts over leading axes."""
    dot = numpy.sum(as_points(a) * as_points(b), axis=-1)
    d = numpy.arccos(numpy.clip(dot, -1.0, 1.0))
    if numpy.ndim(d) == 0:
        return float(d)
    return d


def cos_distance(a, b):
    return numpy.clip(numpy.sum(as_points(a) * as_points(b), axis=-1), -1.0, 1.0)


def sample_uniform_sphere(rng, size=None):
    """Uniform draw: height uniform on [-1, 1], longitude uniform on [0, 2pi).

    Returns a SpherePoint when size is None, otherwise an array (size, 3).
    """
    n = 1 if size is None else int(size)
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2 * numpy.pi, n)
    r = numpy.sqrt(numpy.maximum(0.0, 1 - z * z))
    points = numpy.stack([r * numpy.cos(phi), r * numpy.sin(phi), z], axis=-1)
    if size is None:
        return SpherePoint.from_vector(points[0])
    return points


def sphere_measure(probabilistic=False):
    return 1.0 if probabilistic else 4 * numpy.pi


def cap_measure(theta):
    """Area of the spherical cap of geodesic radius theta; broadcasts."""
    theta = numpy.asarray(theta, dtype=float)
    if numpy.any(theta < 0) or numpy.any(theta > numpy.pi):
        raise ConfigError(f"cap radius must lie in [0, pi], got {theta}")
    area = 2 * numpy.pi * (1 - numpy.cos(theta))
    if numpy.ndim(area) == 0:
        return float(area)
    return area


def sphere_grid(n_lat, n_lon):
    """Gaussian lattice and area weights summing to 4pi.

    Heights are Gauss-Legendre nodes and longitudes are equispaced, so the
    weights integrate spherical polynomials of degree below
    min(2 n_lat, n_lon) exactly.
    """
    if n_lat < 1 or n_lon < 1:
        raise ConfigError(f"lattice needs positive sizes, got {n_lat}x{n_lon}")
    z, wz = leggauss(n_lat)
    lon = numpy.arange(n_lon) * 2 * numpy.pi / n_lon
    zz, ll = numpy.meshgrid(z, lon, indexing="ij")
    r = numpy.sqrt(1 - zz * zz)
    points = numpy.stack([r * numpy.cos(ll), r * numpy.sin(ll), zz], axis=-1).reshape(-1, 3)
    weights = numpy.repeat(wz * 2 * numpy.pi / n_lon, n_lon)
    return points, weights
