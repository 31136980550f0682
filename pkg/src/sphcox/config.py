"""Run configuration: a JSON document with one object per section.

Every section is optional and falls back to the simulation protocol
defaults: window [0, 10] with 100 nodes, truncation M = 5, theta = 1,
1000 Monte Carlo samples, scales 0..30, Renyi orders 1.5 and 2, the 15 x 15
K grid and 500 fitting replicates.
"""

from dataclasses import asdict, dataclass, field, fields, replace
import json
import os
from typing import Optional

from .covariance import CovarianceModel, default_regimes
from .distances import IntegrationSpec
from .field import TimeGrid, snapshot_times
from .fit import PROJECTIONS
from .manifold import sphere_grid
from .summaries import BASELINES
from .util import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    theta: object = 1.0
    M: int = 5
    variance_scale: float = 1.0
    bq_convention: str = "weighted"

    def build(self):
        theta = self.theta
        if isinstance(theta, str):
            regimes = default_regimes()
            if theta not in regimes:
                raise ConfigError(f"unknown regime {theta!r}, expected one of {sorted(regimes)}")
            theta = regimes[theta]
        try:
            theta = float(theta)
            variance_scale = float(self.variance_scale)
        except (TypeError, ValueError):
            raise ConfigError(
                f"theta and variance_scale must be numbers, got {self.theta!r} and {self.variance_scale!r}"
            )
        return CovarianceModel(theta, self.M, variance_scale, self.bq_convention)


@dataclass(frozen=True)
class WindowConfig:
    t0: float = 0.0
    t1: float = 10.0
    n: int = 100

    def build(self):
        return TimeGrid(self.t0, self.t1, self.n)


@dataclass(frozen=True)
class SimulateConfig:
    replicates: int = 1
    max_candidates: int = 10**7
    write_fields: bool = True
    # None: snapshot_count times evenly spaced over the window; [] writes none
    snapshot_times: Optional[list] = None
    snapshot_count: int = 4
    snapshot_n_lat: int = 48
    snapshot_n_lon: int = 96


@dataclass(frozen=True)
class DistancesConfig:
    method: str = "monte-carlo"
    samples: int = 1000
    # 8 for pairs and 6 for triples when unset
    nodes_per_axis: Optional[int] = None
    angle_nodes: Optional[int] = None
    n: int = 2
    scales: list = field(default_factory=lambda: list(range(31)))
    hs: list = field(default_factory=lambda: [1.5, 2.0])
    extended: bool = True
    smooth_degree: Optional[int] = 5
    z: float = 3.0
    effect_floor: float = 0.0
    chunk_size: int = 10000


@dataclass(frozen=True)
class KfunConfig:
    scales: list = field(default_factory=lambda: [1, 7, 13, 19, 25])
    n_thetas: int = 15
    n_ts: int = 15
    method: str = "monte-carlo"
    samples: int = 100000
    nodes_per_axis: int = 32
    angle_nodes: Optional[int] = 64
    baseline: str = "selfconsistent"
    control_variate: bool = True
    include_model: bool = True
    z: float = 3.0
    fraction: float = 0.8
    chunk_size: int = 100000


@dataclass(frozen=True)
class FitConfig:
    replicates: int = 500
    n_lat: int = 48
    n_lon: int = 96
    # None spans the whole window
    lag_steps: Optional[list] = None
    l_max: int = 5
    projection: str = "harmonic"
    n_bins: int = 64
    fit_scale: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    out_dir: str = "out"
    quiet: bool = False
    log_level: str = "INFO"


SECTIONS = {
    "model": ModelConfig,
    "window": WindowConfig,
    "simulate": SimulateConfig,
    "distances": DistancesConfig,
    "kfun": KfunConfig,
    "fit": FitConfig,
    "run": RunConfig,
}


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    distances: DistancesConfig = field(default_factory=DistancesConfig)
    kfun: KfunConfig = field(default_factory=KfunConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def as_dict(self):
        return asdict(self)

    def covariance_model(self):
        return self.model.build()

    def time_grid(self):
        return self.window.build()

    def distance_spec(self):
        d = self.distances
        nodes = d.nodes_per_axis
        if nodes is None:
            nodes = 6 if d.n == 3 else 8
        return IntegrationSpec(
            d.method,
            d.samples,
            nodes,
            d.angle_nodes,
            self.run.seed,
            d.n,
            self.window.t1 - self.window.t0,
            d.chunk_size,
        )

    def kfun_spec(self):
        k = self.kfun
        return IntegrationSpec(
            k.method,
            k.samples,
            k.nodes_per_axis,
            k.angle_nodes,
            self.run.seed,
            2,
            self.window.t1 - self.window.t0,
            k.chunk_size,
        )


def _section(cls, name, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"section {name!r}: {e}")


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - set(SECTIONS)
    # sidecars carry the resolved config next to other metadata
    if "config" in data and isinstance(data["config"], dict):
        return config_from_dict(data["config"])
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    config = Config(**{name: _section(cls, name, data.get(name)) for name, cls in SECTIONS.items()})
    validate(config)
    return config


def load_config(path):
    if path is None:
        config = Config()
        validate(config)
        return config
    if not os.path.exists(path):
        raise ConfigError(f"no such config file: {path}")
    with open(path) as inp:
        try:
            data = json.load(inp)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")
    return config_from_dict(data)


def apply_overrides(config, **overrides):
    """Command-line values replace config values when they are not None."""
    run = config.run
    model = config.model
    kfun = config.kfun
    if overrides.get("seed") is not None:
        run = replace(run, seed=overrides["seed"])
    if overrides.get("workers") is not None:
        run = replace(run, workers=overrides["workers"])
    if overrides.get("out_dir") is not None:
        run = replace(run, out_dir=overrides["out_dir"])
    if overrides.get("quiet"):
        run = replace(run, quiet=True)
    if overrides.get("bq_convention") is not None:
        model = replace(model, bq_convention=overrides["bq_convention"])
    if overrides.get("baseline") is not None:
        kfun = replace(kfun, baseline=overrides["baseline"])
    config = replace(config, run=run, model=model, kfun=kfun)
    validate(config)
    return config


def validate(config):
    """Build every derived object once so bad values fail before any work starts."""
    config.covariance_model()
    config.time_grid()
    config.distance_spec()
    config.kfun_spec()
    if config.run.workers < 1:
        raise ConfigError(f"workers must be at least 1, got {config.run.workers}")
    if config.simulate.replicates < 1:
        raise ConfigError(f"replicates must be at least 1, got {config.simulate.replicates}")
    s = config.simulate
    if s.snapshot_count < 1:
        raise ConfigError(f"snapshot_count must be at least 1, got {s.snapshot_count}")
    snapshot_times(config.time_grid(), s.snapshot_times, s.snapshot_count)
    sphere_grid(s.snapshot_n_lat, s.snapshot_n_lon)
    if config.kfun.baseline not in BASELINES:
        raise ConfigError(f"unknown baseline {config.kfun.baseline!r}")
    if config.fit.projection not in PROJECTIONS:
        raise ConfigError(f"fit projection must be one of {PROJECTIONS}, got {config.fit.projection!r}")
    if not 0 < config.kfun.fraction <= 1:
        raise ConfigError(f"classification fraction must lie in (0, 1], got {config.kfun.fraction}")
    for h in config.distances.hs:
        if h == 1 or h <= 0:
            raise ConfigError(f"Renyi orders must be positive and not 1, got {h}")
