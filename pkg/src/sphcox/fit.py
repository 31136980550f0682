"""Recover the covariance model from gridded field replicates.

Cross-covariances between lattice points are accumulated per time lag and
reduced to Legendre coefficients of the isotropic kernel. The default
"harmonic" projection expands each time slice in real spherical harmonics,
so by the addition theorem

    b_l(k) = 4 pi / W^2 * sum_m mean(a_lm(t) a_lm(t + k))

with a_lm(t) = sum_i w_i X_i(t) Y_lm(x_i) and W = sum_i w_i. The "binned"
projection averages pair products within cos-distance bins first.

The dependence-range parameter theta is then fitted by bounded scalar least
squares on log theta, with the variance level profiled out by default.
"""

from dataclasses import dataclass
import logging

import numpy
import scipy.optimize
from tqdm import tqdm

from .covariance import coef_cov
from .field import FieldRealization, eval_field_grid, simulate_coefficients
from .manifold import legendre_table, real_harmonics, sphere_grid
from .util import CapacityError, ConfigError, NumericalError, parallel_map, spawn_generators


logger = logging.getLogger(__name__)

MIN_REPLICATES = 50
THETA_BOUNDS = (1e-4, 1e4)
PROJECTIONS = ("harmonic", "binned")
DEFAULT_LATTICE = (48, 96)
MAX_BINNED_ENTRIES = 10**8


def spanning_lag_steps(n):
    """Every lag of an n-node time grid, 0 .. n - 1."""
    return list(range(int(n)))


def _lattice_replicate(args):
    model, grid, points, rng = args
    f = simulate_coefficients(model, grid, rng)
    return eval_field_grid(f, grid.nodes, points)


def field_lattice_values(model, grid, points, replicates, seed, workers=1, batch=32):
    """Yields one (time nodes x points) array per simulated replicate, in order."""
    rngs = spawn_generators(seed, replicates)
    for start in range(0, replicates, batch):
        args = [(model, grid, points, rng) for rng in rngs[start : start + batch]]
        yield from parallel_map(_lattice_replicate, args, workers)


class LatticeCovariance:
    """Lag-wise isotropic covariance of lattice replicates.

    lag_steps=None takes every lag of the first replicate's time grid.
    """

    def __init__(self, points, weights, lag_steps=None, n_bins=64, l_max=5, projection="harmonic"):
        if projection not in PROJECTIONS:
            raise ConfigError(f"projection must be one of {PROJECTIONS}, got {projection!r}")
        self.points = numpy.asarray(points, dtype=float)
        self.weights = numpy.asarray(weights, dtype=float)
        if self.weights.shape != (len(self.points),):
            raise ConfigError(
                f"got {len(self.weights)} weights for {len(self.points)} lattice points"
            )
        self.lag_steps = None
        if lag_steps is not None:
            self.lag_steps = [int(k) for k in lag_steps]
            if any(k < 0 for k in self.lag_steps):
                raise ConfigError(f"lag steps must be non-negative, got {self.lag_steps}")
        self.n_bins = n_bins
        self.l_max = int(l_max)
        self.projection = projection
        self.sums = None
        self.pairs = None
        self.replicates = 0

        if projection == "harmonic":
            table, self.degrees = real_harmonics(self.l_max, self.points)
            self.harmonics = table * self.weights
            return
        self.cos = numpy.clip(self.points @ self.points.T, -1.0, 1.0)
        self.bins = numpy.minimum(
            ((self.cos + 1) / 2 * n_bins).astype(int), n_bins - 1
        ).ravel()
        self.pair_weights = numpy.outer(self.weights, self.weights).ravel()
        self.bin_mass = numpy.bincount(self.bins, self.pair_weights, minlength=n_bins)

    def _start(self, nt):
        if self.lag_steps is None:
            self.lag_steps = spanning_lag_steps(nt)
        npts = len(self.points)
        if self.projection == "harmonic":
            shape = (len(self.lag_steps), len(self.degrees))
        else:
            shape = (len(self.lag_steps), npts, npts)
            if numpy.prod(shape) > MAX_BINNED_ENTRIES:
                raise CapacityError(
                    f"binned covariance needs {numpy.prod(shape):.3g} entries; "
                    "use the harmonic projection or fewer lags"
                )
        self.sums = numpy.zeros(shape)
        self.pairs = numpy.zeros(len(self.lag_steps))

    def add(self, values):
        values = numpy.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.points):
            raise ConfigError(
                f"lattice values have shape {values.shape}, expected (times, {len(self.points)})"
            )
        nt = values.shape[0]
        if self.sums is None:
            self._start(nt)
        if max(self.lag_steps) >= nt:
            raise ConfigError(f"lag of {max(self.lag_steps)} steps needs more than {nt} time nodes")
        if self.projection == "harmonic":
            a = values @ self.harmonics.T
        for index, k in enumerate(self.lag_steps):
            if self.projection == "harmonic":
                self.sums[index] += numpy.sum(a[: nt - k] * a[k:], axis=0)
            else:
                self.sums[index] += values[: nt - k].T @ values[k:]
            self.pairs[index] += nt - k
        self.replicates += 1

    def _bin(self, matrix):
        totals = numpy.bincount(self.bins, self.pair_weights * matrix.ravel(), minlength=self.n_bins)
        occupied = self.bin_mass > 0
        result = numpy.zeros(self.n_bins)
        result[occupied] = totals[occupied] / self.bin_mass[occupied]
        return result

    def binned(self):
        """Isotropy-averaged covariance, shape (lags, bins)."""
        if self.projection != "binned":
            raise ConfigError("binned covariance needs projection='binned'")
        if self.replicates == 0:
            raise ConfigError("no replicates accumulated")
        return numpy.stack(
            [self._bin(s / n) for s, n in zip(self.sums, self.pairs)]
        )

    def kernel_coefficients(self, l_max):
        """Legendre coefficients b_l of the empirical kernel, shape (l_max + 1, lags)."""
        if self.replicates == 0:
            raise ConfigError("no replicates accumulated")
        if self.projection == "harmonic":
            if l_max > self.l_max:
                raise ConfigError(f"harmonics were built up to degree {self.l_max}, not {l_max}")
            means = self.sums / self.pairs[:, None]
            scale = 4 * numpy.pi / self.weights.sum() ** 2
            return numpy.stack(
                [scale * means[:, self.degrees == l].sum(axis=1) for l in range(l_max + 1)]
            )
        table = legendre_table(l_max, self.cos)
        mean_p = numpy.stack([self._bin(p) for p in table])
        mass = self.bin_mass / self.bin_mass.sum()
        r = self.binned()
        degrees = numpy.arange(l_max + 1)[:, None]
        return (2 * degrees + 1) * (mean_p * mass) @ r.T


def _kernel_to_coef(b, l, convention):
    if convention == "weighted":
        return b * 4 * numpy.pi / (2 * l + 1)
    return b


def empirical_coef_table(
    realizations,
    l_max,
    lag_steps=None,
    points=None,
    weights=None,
    bq_convention="weighted",
    n_bins=64,
    min_replicates=MIN_REPLICATES,
    progress=False,
    projection="harmonic",
):
    """B_l estimates for l = 0..l_max, shape (l_max + 1, lags).

    realizations yields FieldRealization objects or (time nodes x points)
    arrays already evaluated on the lattice. lag_steps=None takes every lag.
    """
    if points is None:
        points, weights = sphere_grid(*DEFAULT_LATTICE)
    points = numpy.asarray(points, dtype=float)
    if weights is None:
        weights = numpy.full(len(points), 4 * numpy.pi / len(points))
    accumulator = LatticeCovariance(points, weights, lag_steps, n_bins, l_max, projection)
    for r in tqdm(realizations, desc="replicates", disable=not progress):
        if isinstance(r, FieldRealization):
            r = eval_field_grid(r, r.grid.nodes, points)
        accumulator.add(r)
    if accumulator.replicates < min_replicates:
        raise ConfigError(
            f"covariance estimation needs at least {min_replicates} replicates, "
            f"got {accumulator.replicates}"
        )
    b = accumulator.kernel_coefficients(l_max)
    return numpy.stack([_kernel_to_coef(b[l], l, bq_convention) for l in range(l_max + 1)])


def empirical_coef_cov(realizations, l, lag_steps=None, **kwargs):
    return empirical_coef_table(realizations, l, lag_steps, **kwargs)[l]


@dataclass(frozen=True)
class FitResult:
    theta_hat: float
    residual: float
    evaluations: int
    variance_scale: float


def _profiled(bhat, fitted):
    """Least-squares level c >= 0 of fitted against bhat."""
    norm = float(numpy.sum(fitted * fitted))
    if norm == 0:
        return 0.0
    return max(0.0, float(numpy.sum(bhat * fitted)) / norm)


def fit_theta(bhat, degrees, lags, model, fit_scale=True):
    """Least-squares theta for B_l(tau; theta) against bhat[degree index, lag index].

    model supplies the truncation and variance scale; its theta is ignored.
    With fit_scale the variance level is a free multiplier of the model,
    solved in closed form at every theta.
    """
    bhat = numpy.asarray(bhat, dtype=float)
    degrees = list(degrees)
    lags = numpy.asarray(lags, dtype=float)
    if len(degrees) < 2 or len(lags) < 5:
        raise ConfigError(
            f"fitting needs at least 2 degrees and 5 lags, got {len(degrees)} and {len(lags)}"
        )
    if bhat.shape != (len(degrees), len(lags)):
        raise ConfigError(f"bhat must be {(len(degrees), len(lags))}, got {bhat.shape}")
    if not numpy.all(numpy.isfinite(bhat)):
        raise NumericalError("empirical coefficients contain non-finite values")

    def _fitted(log_theta):
        candidate = model.with_theta(float(numpy.exp(log_theta)))
        fitted = numpy.stack([coef_cov(candidate, l, lags, extended=True) for l in degrees])
        scale = _profiled(bhat, fitted) if fit_scale else 1.0
        return scale, fitted

    def objective(log_theta):
        scale, fitted = _fitted(log_theta)
        value = float(numpy.sum((bhat - scale * fitted) ** 2))
        if not numpy.isfinite(value):
            raise NumericalError(f"non-finite residual at theta={numpy.exp(log_theta):.3g}")
        return value

    bounds = tuple(numpy.log(THETA_BOUNDS))
    result = scipy.optimize.minimize_scalar(
        objective, bounds=bounds, method="bounded", options={"xatol": 1e-10}
    )
    theta_hat = float(numpy.exp(result.x))
    scale, _ = _fitted(result.x)
    logger.info("fitted theta %.6g (residual %.3g, %d evaluations)", theta_hat, result.fun, result.nfev)
    return FitResult(theta_hat, float(result.fun), int(result.nfev), scale * model.variance_scale)
