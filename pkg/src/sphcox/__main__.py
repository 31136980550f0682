import argparse
import logging
import multiprocessing
import os
import sys
import time
import traceback

import numpy
from tqdm import tqdm

from . import __version__
from .config import apply_overrides, load_config
from .cox import pattern_metadata, read_pattern, sample_pattern, PATTERN_HEADER
from .datafiles import read_metadata, staged_outputs
from .distances import distance_tables, read_distance_table
from .field import (
    FIELD_HEADER,
    SNAPSHOT_HEADER,
    field_metadata,
    field_rows,
    load_field,
    simulate_coefficients,
    snapshot_rows,
    snapshot_times,
)
from .fit import empirical_coef_table, field_lattice_values, fit_theta, spanning_lag_steps
from .manifold import sphere_grid
from .summaries import (
    BASELINES,
    UNCORRECTED,
    baseline_grid,
    classify_from_k,
    g_empirical,
    k_difference,
    k_empirical,
    k_log_ratio_norm,
    k_model,
    k_scale,
    report_header,
    scale_reports,
)
from .util import ConfigError, NumericalError, parallel_map, spawn_generators, splitext


logger = logging.getLogger("sphcox")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class Run:
    """Resolved config plus the metadata every output sidecar carries."""

    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.started = time.perf_counter()

    def metadata(self, **extra):
        metadata = {
            "tool": "sphcox",
            "version": __version__,
            "command": self.command,
            "config": self.config.as_dict(),
            "seed": self.config.run.seed,
            "workers": self.config.run.workers,
            "wall_time": round(time.perf_counter() - self.started, 3),
        }
        metadata.update(extra)
        return metadata

    @property
    def progress(self):
        return not self.config.run.quiet


def _simulate_replicate(args):
    model, grid, max_candidates, seed, index, rng = args
    f = simulate_coefficients(model, grid, rng, seed=[seed, index])
    p = sample_pattern(f, rng, max_candidates)
    return f, p


def cmd_simulate(run, args):
    config = run.config
    model = config.covariance_model()
    grid = config.time_grid()
    replicates = config.simulate.replicates
    s = config.simulate
    times = snapshot_times(grid, s.snapshot_times, s.snapshot_count)
    seed = config.run.seed
    rngs = spawn_generators(seed, replicates)
    tasks = [
        (model, grid, s.max_candidates, seed, index, rng)
        for index, rng in enumerate(rngs)
    ]

    with staged_outputs(config.run.out_dir) as outputs:
        for index, (f, p) in enumerate(
            tqdm(
                parallel_map(_simulate_replicate, tasks, config.run.workers),
                desc="writing replicates",
                disable=not run.progress,
            )
        ):
            if s.write_fields:
                outputs.table(
                    f"field_{index:04d}.csv",
                    FIELD_HEADER,
                    field_rows(f),
                    run.metadata(replicate=index, **field_metadata(f)),
                )
            outputs.table(
                f"pattern_{index:04d}.csv",
                PATTERN_HEADER,
                numpy.column_stack([p.times, p.locations]),
                run.metadata(replicate=index, **pattern_metadata(p)),
            )
            if len(times):
                outputs.table(
                    f"logintensity_{index:04d}.csv",
                    SNAPSHOT_HEADER,
                    snapshot_rows(f, times, s.snapshot_n_lat, s.snapshot_n_lon),
                    run.metadata(
                        replicate=index,
                        type="log-intensity",
                        times=times,
                        lattice=[s.snapshot_n_lat, s.snapshot_n_lon],
                        pole=[f.pole.x, f.pole.y, f.pole.z],
                    ),
                )
            logger.info("replicate %d: %d events", index, len(p))


def cmd_distances(run, args):
    config = run.config
    d = config.distances
    model = config.covariance_model()
    spec = config.distance_spec()
    tables = distance_tables(
        model, d.scales, spec, d.hs, d.extended, config.run.workers, run.progress
    )
    with staged_outputs(config.run.out_dir) as outputs:
        for table in tables:
            extra = dict(table.metadata)
            if d.smooth_degree is not None and table.smooth(d.smooth_degree):
                extra["smoothing"] = {
                    "degree": d.smooth_degree,
                    "coefficients": table.smoothing.coefficients,
                    "residual_norm": table.smoothing.residual_norm,
                }
            extra["labels"] = table.classify(d.z, d.effect_floor)
            outputs.table(f"{table.name}.csv", table.header, table.rows(), run.metadata(**extra))


def _grid_nodes(config):
    k = config.kfun
    thetas = numpy.linspace(0.0, numpy.pi, k.n_thetas)
    ts = numpy.linspace(0.0, config.window.t1 - config.window.t0, k.n_ts)
    return thetas, ts


def _write_grid(outputs, run, name, grid, **extra):
    metadata = run.metadata(std_errors=grid.std_errors, **dict(grid.metadata, **extra))
    rows = list(grid.rows())
    outputs.table(name, rows[0], rows[1:], metadata)


def _log_ratio_norm(grid, baseline):
    # None when no cell is positive in both grids, as for a sparse pattern
    valid = (grid.values > 0) & (baseline.values > 0)
    if not numpy.any(valid):
        return None
    return k_log_ratio_norm(grid, baseline)


def cmd_kfun(run, args):
    config = run.config
    k = config.kfun
    model = config.covariance_model()
    spec = config.kfun_spec()
    thetas, ts = _grid_nodes(config)
    T = config.window.t1 - config.window.t0
    baseline = baseline_grid(thetas, ts, T, k.baseline)
    if k.baseline in UNCORRECTED:
        logger.info("baseline 2 t pi (1 - cos theta) ignores the temporal edge effect")

    labels = {}
    with staged_outputs(config.run.out_dir) as outputs:
        if args.pattern:
            for path in args.pattern:
                p = read_pattern(path)
                name = os.path.basename(splitext(path)[0])
                empirical = k_empirical(p, thetas, ts)
                norm = _log_ratio_norm(empirical, baseline)
                _write_grid(
                    outputs, run, f"k_empirical_{name}.csv", empirical, source=path, log_ratio_norm=norm
                )
                diff = k_difference(empirical, baseline)
                _write_grid(
                    outputs, run, f"kdiff_empirical_{name}.csv", diff, source=path, log_ratio_norm=norm
                )
                _write_grid(
                    outputs, run, f"g_empirical_{name}.csv", g_empirical(p, thetas, ts), source=path
                )
            return

        if k.include_model:
            grid = k_model(model, thetas, ts, spec, k.control_variate)
            _write_grid(
                outputs, run, "k_model.csv", grid, log_ratio_norm=_log_ratio_norm(grid, baseline)
            )
        norms = {}
        for q in tqdm(k.scales, desc="scales", disable=not run.progress):
            grid = k_scale(model, q, thetas, ts, spec, True, k.control_variate)
            diff = k_difference(grid, baseline)
            labels[q] = classify_from_k(grid, baseline, k.z, k.fraction)
            norms[q] = _log_ratio_norm(grid, baseline)
            _write_grid(
                outputs, run, f"k_q{q:02d}.csv", grid, label=labels[q], log_ratio_norm=norms[q]
            )
            _write_grid(
                outputs, run, f"kdiff_q{q:02d}.csv", diff, label=labels[q], log_ratio_norm=norms[q]
            )
        outputs.json("k_labels.json", run.metadata(labels=labels, log_ratio_norms=norms))


def cmd_fit(run, args):
    config = run.config
    fc = config.fit
    model = config.covariance_model()
    points, weights = sphere_grid(fc.n_lat, fc.n_lon)
    if args.fields:
        realizations = (load_field(path) for path in args.fields)
        grid = load_field(args.fields[0]).grid
        source = list(args.fields)
    else:
        grid = config.time_grid()
        realizations = field_lattice_values(
            model, grid, points, fc.replicates, config.run.seed, config.run.workers
        )
        source = "simulated"

    lag_steps = fc.lag_steps if fc.lag_steps is not None else spanning_lag_steps(grid.n)
    bhat = empirical_coef_table(
        realizations,
        fc.l_max,
        lag_steps,
        points,
        weights,
        model.bq_convention,
        fc.n_bins,
        progress=run.progress,
        projection=fc.projection,
    )
    step = grid.nodes[1] - grid.nodes[0]
    lags = numpy.array(lag_steps) * step
    result = fit_theta(bhat, range(fc.l_max + 1), lags, model, fc.fit_scale)
    print("fitted theta:", result.theta_hat)

    with staged_outputs(config.run.out_dir) as outputs:
        outputs.json(
            "fit.json",
            run.metadata(
                theta_hat=result.theta_hat,
                residual=result.residual,
                evaluations=result.evaluations,
                variance_scale=result.variance_scale,
                projection=fc.projection,
                bins=fc.n_bins if fc.projection == "binned" else None,
                lags=lags,
                bhat=bhat,
                source=source,
            ),
        )


def cmd_classify(run, args):
    config = run.config
    d = config.distances
    folder = args.distances
    shannon = read_distance_table(os.path.join(folder, "shannon.csv"))
    renyi = []
    for h in d.hs:
        path = os.path.join(folder, f"renyi-h{h:g}.csv")
        if os.path.exists(path):
            renyi.append(read_distance_table(path))
    k_labels = None
    if args.k_labels:
        k_labels = {int(q): label for q, label in read_metadata(args.k_labels)["labels"].items()}

    reports = scale_reports(shannon, renyi, k_labels, d.z, d.effect_floor)
    hs = [table.h for table in renyi]
    with staged_outputs(config.run.out_dir) as outputs:
        outputs.table(
            "classification.csv",
            report_header(hs),
            [report.row(hs) for report in reports],
            run.metadata(sources=[folder, args.k_labels]),
        )


COMMANDS = {
    "simulate": cmd_simulate,
    "distances": cmd_distances,
    "kfun": cmd_kfun,
    "fit": cmd_fit,
    "classify": cmd_classify,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sphcox",
        description="Simulate log-Gaussian Cox processes on the sphere and classify them per Legendre scale.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=None,
        help="JSON run configuration. A metadata sidecar from an earlier run also works.",
    )
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--out-dir", default=None)
    common.add_argument("--baseline", choices=list(BASELINES), default=None)
    common.add_argument("--bq-convention", choices=["weighted", "raw"], default=None)
    common.add_argument("--quiet", action="store_true", default=False)

    subparsers.add_parser("simulate", parents=[common], help="Write field and pattern replicates.")
    subparsers.add_parser(
        "distances", parents=[common], help="Shannon and Renyi distances per scale."
    )
    kfun = subparsers.add_parser("kfun", parents=[common], help="Per-scale K grids.")
    kfun.add_argument(
        "--pattern",
        nargs="*",
        default=None,
        help="Pattern CSV files. When given, empirical K and G grids are computed instead.",
    )
    fit = subparsers.add_parser("fit", parents=[common], help="Fit theta from field replicates.")
    fit.add_argument(
        "fields",
        nargs="*",
        help="Field CSV files. Without any, replicates are simulated from the config.",
    )
    classify = subparsers.add_parser(
        "classify", parents=[common], help="Per-scale reports from distance tables."
    )
    classify.add_argument("--distances", required=True, help="Folder written by the distances command.")
    classify.add_argument("--k-labels", default=None, help="k_labels.json written by kfun.")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        config = apply_overrides(
            config,
            seed=args.seed,
            workers=args.workers,
            out_dir=args.out_dir,
            quiet=args.quiet,
            baseline=args.baseline,
            bq_convention=args.bq_convention,
        )
    except ConfigError as e:
        print("config error:", e, file=sys.stderr)
        return EXIT_CONFIG

    out_dir = config.run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    logging.basicConfig(
        filename=os.path.join(out_dir, "logs.txt"),
        level=getattr(logging, config.run.log_level.upper(), logging.INFO),
        force=True,
    )
    logging.captureWarnings(True)
    if config.run.workers > 1:
        multiprocessing.set_start_method("spawn", force=True)

    print("running:", args.command, "->", out_dir)
    run = Run(args.command, config)
    try:
        COMMANDS[args.command](run, args)
    except KeyboardInterrupt:
        raise
    except ConfigError as e:
        print(f"error running {args.command}: {e} - check {out_dir}/logs.txt for details.")
        logger.exception(traceback.format_exc())
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure in {args.command}: {e} - check {out_dir}/logs.txt for details.")
        logger.exception(traceback.format_exc())
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
