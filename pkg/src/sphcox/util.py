from contextlib import contextmanager
import logging
import multiprocessing
import os

import numpy


logger = logging.getLogger(__name__)


class SphcoxError(Exception):
    pass


class ConfigError(SphcoxError, ValueError):
    """Invalid configuration, argument or precondition."""


class DegreeError(ConfigError):
    """Polynomial degree beyond the truncation level or the evaluation limit."""


class NumericalError(SphcoxError, ArithmeticError):
    """Cholesky failure, rank deficiency or a non-finite objective."""


class CapacityError(NumericalError):
    """A sampler or integrator would exceed its configured cost cap."""


def splitext(path):
    # This handles /.ext in a way that works better for output specs than os.path.splitext.
    folder, filename = os.path.split(path)
    if "." in filename:
        name, ext = filename.rsplit(".", maxsplit=1)
        return os.path.join(folder, name), f".{ext}"
    return path, ""


def sidecar_path(path):
    return f"{splitext(path)[0]}.json"


def create_temp_file(output_path):
    dirname = os.path.dirname(output_path)
    basename = f"temp-{os.path.basename(output_path)}"
    return os.path.join(dirname, basename)


def spawn_generators(seed, count):
    """One independent generator per replicate or chunk, indexed by position."""
    children = numpy.random.SeedSequence(seed).spawn(count)
    return [numpy.random.default_rng(child) for child in children]


def chunk_sizes(total, chunk_size):
    sizes = [chunk_size] * (total // chunk_size)
    if total % chunk_size:
        sizes.append(total % chunk_size)
    return sizes


def pool(threads):
    threads = int(threads)
    if threads < 1:
        threads = None

    @contextmanager
    def _pool():
        if threads == 1:
            yield SerialMapper()
            return

        with multiprocessing.Pool(threads) as pool:
            yield Mapper(pool)

    return _pool


class SerialMapper:
    def map(self, fn, args):
        return [fn(x) for x in args]


class Mapper:
    def __init__(self, pool):
        self.pool = pool

    def map(self, fn, args):
        original_pids = set([x.pid for x in self.pool._pool])
        future = self.pool.map_async(fn, args)
        while True:
            try:
                result = future.get(0.1)
                return result
            except multiprocessing.TimeoutError:
                current_pids = set([x.pid for x in self.pool._pool])
                if current_pids - original_pids:
                    logger.error("worker pool replaced a dead process")
                    raise ChildProcessError("a worker process died")


def parallel_map(fn, args, workers=1):
    """Map in order; results come back in argument order for any worker count."""
    args = list(args)
    if workers == 1 or len(args) <= 1:
        return [fn(x) for x in args]

    with pool(workers)() as p:
        return p.map(fn, args)
