"""Closed-form product densities, intensity and pair correlation.

Product densities use the off-diagonal convention

    log rho^(n) = n log rho + 1/2 sum_{i != j} r_{t_i - t_j}(cos d(z_i, z_j))

so that n = 1 gives the intensity and n = 2 gives rho^2 g.
"""

from dataclasses import dataclass

import numpy

from .covariance import scale_coefficient, spacetime_kernel
from .manifold import as_points, legendre_eval
from .util import ConfigError


@dataclass(frozen=True, eq=False)
class Configuration:
    times: numpy.ndarray
    locations: numpy.ndarray

    def __post_init__(self):
        times = numpy.array(self.times, dtype=float).reshape(-1)
        locations = as_points(self.locations).reshape(-1, 3)
        if len(times) != len(locations) or len(times) < 1:
            raise ConfigError(
                f"configuration needs n >= 1 matching times and locations, "
                f"got {len(times)} and {len(locations)}"
            )
        locations = locations / numpy.linalg.norm(locations, axis=1)[:, None]
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "locations", locations)

    def __len__(self):
        return len(self.times)

    def offdiagonal(self):
        """Lags and cosines for ordered pairs i != j."""
        n = len(self)
        i, j = numpy.nonzero(~numpy.eye(n, dtype=bool))
        lags = self.times[i] - self.times[j]
        cosd = numpy.clip(
            numpy.sum(self.locations[i] * self.locations[j], axis=1), -1.0, 1.0
        )
        return lags, cosd


def log_intensity(model):
    return spacetime_kernel(model, 0.0, 1.0) / 2


def intensity(model):
    return float(numpy.exp(log_intensity(model)))


def log_product_density(model, c):
    lags, cosd = c.offdiagonal()
    pair_sum = float(numpy.sum(spacetime_kernel(model, lags, cosd))) if len(lags) else 0.0
    return len(c) * log_intensity(model) + pair_sum / 2


def log_per_scale_density(model, q, c, extended=False):
    b0 = scale_coefficient(model, q, 0.0, extended)
    lags, cosd = c.offdiagonal()
    pair_sum = 0.0
    if len(lags):
        b = scale_coefficient(model, q, lags, extended)
        pair_sum = float(numpy.sum(b * legendre_eval(q, cosd)))
    return len(c) * b0 / 2 + pair_sum / 2


def per_scale_density(model, q, c, extended=False):
    return float(numpy.exp(log_per_scale_density(model, q, c, extended)))


def scale_intensity(model, q, extended=False):
    return float(numpy.exp(scale_coefficient(model, q, 0.0, extended) / 2))


def pair_correlation(model, tau, u):
    g = numpy.exp(spacetime_kernel(model, tau, u))
    if numpy.ndim(g) == 0:
        return float(g)
    return g


def scale_pair_correlation(model, q, tau, u, extended=False):
    """exp(b_q(tau) P_q(u)); the product over q <= M is pair_correlation."""
    g = numpy.exp(scale_coefficient(model, q, tau, extended) * legendre_eval(q, u))
    if numpy.ndim(g) == 0:
        return float(g)
    return g
