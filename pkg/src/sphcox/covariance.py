"""Temporal covariance of the Legendre coefficient processes.

B_l(tau) = (variance_scale / 2) (l+1)^(-2-|tau|) / (1 + tau^2)^(theta beta(l))

The per-scale kernel coefficient is b_q = B_q (2q+1) / (4pi) under the
"weighted" convention and b_q = B_q under "raw".
"""

from dataclasses import dataclass, replace
from functools import lru_cache
import logging

import numpy
import scipy.linalg

from .manifold import MAX_DEGREE, legendre_table
from .util import ConfigError, DegreeError, NumericalError


logger = logging.getLogger(__name__)

BQ_CONVENTIONS = ("weighted", "raw")
MAX_JITTER = 1e-6


@dataclass(frozen=True)
class CovarianceModel:
    theta: float = 1.0
    M: int = 5
    variance_scale: float = 1.0
    bq_convention: str = "weighted"

    def __post_init__(self):
        if not (numpy.isfinite(self.theta) and self.theta > 0):
            raise ConfigError(f"theta must be positive, got {self.theta}")
        if int(self.M) != self.M or self.M < 0:
            raise ConfigError(f"truncation M must be a non-negative integer, got {self.M}")
        if self.M > MAX_DEGREE:
            raise DegreeError(f"truncation M={self.M} exceeds the limit {MAX_DEGREE}")
        if not (numpy.isfinite(self.variance_scale) and self.variance_scale >= 0):
            raise ConfigError(
                f"variance_scale must be non-negative, got {self.variance_scale}"
            )
        if self.bq_convention not in BQ_CONVENTIONS:
            raise ConfigError(
                f"bq_convention must be one of {BQ_CONVENTIONS}, got {self.bq_convention!r}"
            )
        object.__setattr__(self, "M", int(self.M))

    def with_theta(self, theta):
        return replace(self, theta=theta)

    def check_degree(self, l, extended=False):
        if int(l) != l or l < 0:
            raise DegreeError(f"degree must be a non-negative integer, got {l}")
        limit = MAX_DEGREE if extended else self.M
        if l > limit:
            raise DegreeError(f"degree {l} exceeds the truncation level {limit}")

    def as_dict(self):
        return {
            "theta": self.theta,
            "M": self.M,
            "variance_scale": self.variance_scale,
            "bq_convention": self.bq_convention,
        }


def default_regimes():
    return {"lrd": 0.01, "intermediate": 1.0, "srd": 100.0}


def beta_of_l(l):
    l1 = numpy.asarray(l, dtype=float) + 1
    result = 0.8 * l1 / numpy.sqrt(l1 * l1 + 1)
    if numpy.ndim(result) == 0:
        return float(result)
    return result


def _coef_cov(model, l, tau):
    tau = numpy.abs(numpy.asarray(tau, dtype=float))
    decay = (2.0 + tau) * numpy.log(l + 1.0) + model.theta * beta_of_l(l) * numpy.log1p(tau * tau)
    return 0.5 * model.variance_scale * numpy.exp(-decay)


def _scalar(value):
    if numpy.ndim(value) == 0:
        return float(value)
    return value


def coef_cov(model, l, tau, extended=False):
    """B_l(tau); degrees beyond M need extended=True."""
    model.check_degree(l, extended)
    return _scalar(_coef_cov(model, l, tau))


def scale_coefficient(model, q, tau, extended=False):
    """b_q(tau) under the model's convention."""
    model.check_degree(q, extended)
    value = _coef_cov(model, q, tau)
    if model.bq_convention == "weighted":
        value = value * (2 * q + 1) / (4 * numpy.pi)
    return _scalar(value)


def scale_coefficients(model, tau, degrees=None, extended=False):
    """Rows b_q(tau) for each q in degrees (default 0..M)."""
    if degrees is None:
        degrees = range(model.M + 1)
    tau = numpy.asarray(tau, dtype=float)
    return numpy.stack([scale_coefficient(model, q, tau, extended) for q in degrees])


def spacetime_kernel(model, tau, u):
    """r_tau(u) = sum over l <= M of b_l(tau) P_l(u); tau and u broadcast."""
    tau, u = numpy.broadcast_arrays(
        numpy.asarray(tau, dtype=float), numpy.asarray(u, dtype=float)
    )
    b = scale_coefficients(model, tau)
    p = legendre_table(model.M, u)
    return _scalar(numpy.sum(b * p, axis=0))


def path_covariance(model, l, tau):
    """Covariance of the simulated coefficient path V_l.

    The factor (2l+1) compensates the 1/(2l+1) from averaging P_l over the
    uniform pole, so the field covariance equals spacetime_kernel.
    """
    return (2 * l + 1) * scale_coefficient(model, l, tau)


def cholesky_with_jitter(gram, max_jitter=MAX_JITTER, label=None):
    """Lower Cholesky factor, escalating diagonal jitter from 0 to max_jitter.

    Returns (factor, jitter).
    """
    jitter = 0.0
    identity = numpy.eye(gram.shape[0])
    while True:
        try:
            factor = scipy.linalg.cholesky(gram + jitter * identity, lower=True)
            if jitter:
                logger.info("cholesky %s needed jitter %.1e", label or "", jitter)
            return factor, jitter
        except numpy.linalg.LinAlgError:
            jitter = 1e-15 if jitter == 0 else jitter * 10
            if jitter > max_jitter * (1 + 1e-9):
                raise NumericalError(
                    f"covariance {label or ''} is not positive definite "
                    f"with jitter up to {max_jitter:.0e}"
                )


def temporal_gram(model, l, nodes):
    nodes = numpy.asarray(nodes, dtype=float)
    lags = nodes[:, None] - nodes[None, :]
    return path_covariance(model, l, lags)


@lru_cache(maxsize=64)
def _cached_factor(model, l, nodes, max_jitter):
    gram = temporal_gram(model, l, numpy.array(nodes))
    if not numpy.any(gram):
        factor, jitter = numpy.zeros_like(gram), 0.0
    else:
        factor, jitter = cholesky_with_jitter(gram, max_jitter, label=f"degree {l}")
    factor.setflags(write=False)
    return factor, jitter


def temporal_factor(model, l, nodes, max_jitter=MAX_JITTER):
    """Cached (factor, jitter) for degree l on the given time nodes."""
    nodes = tuple(float(t) for t in nodes)
    try:
        return _cached_factor(model, l, nodes, max_jitter)
    except NumericalError as e:
        raise NumericalError(f"degree {l}: {e}") from e
