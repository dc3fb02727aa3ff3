"""Command-line front end.

Precedence of settings, lowest to highest: built-in defaults, the YAML file
given with ``--config``, the ``SCHRODINGER_ULA_OUTPUT`` environment variable
(output root only), ``--set key=value`` pairs, dedicated flags.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("schrodinger_ula")


def _parse_set(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config entry (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("-N", type=int, dest="N", help="sample size")
    common.add_argument("-D", type=int, dest="D", help="number of modes")
    common.add_argument("--mode", choices=["practical", "asymptotic"])
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="schrodinger-ula",
                                description="Langevin posterior sampling for the Schrödinger regression model")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("init", parents=[common], help="compute theta_init")
    s = sub.add_parser("sample", parents=[common], help="run the Langevin chain")
    s.add_argument("-J", type=int, dest="J")
    s.add_argument("--gamma", type=float)
    sub.add_parser("map", parents=[common], help="maximize the surrogate posterior")
    sub.add_parser("bounds", parents=[common], help="write the bound certificate")
    c = sub.add_parser("curvature", parents=[common], help="curvature scaling study")
    c.add_argument("--D-list", default="4,8,16,32", help="comma-separated D values")
    c.add_argument("--radius", type=float, default=0.0, help="probe ball radius")
    c.add_argument("--n-probe", type=int, default=1)
    c.add_argument("--data", type=Path, help="use this dataset instead of noiseless data")
    pp = sub.add_parser("pipeline", parents=[common], help="all stages end to end")
    pp.add_argument("-J", type=int, dest="J")
    pp.add_argument("--gamma", type=float)
    for name in ("init", "sample", "map", "bounds"):
        sub.choices[name].add_argument("--data", type=Path, help="existing dataset CSV")
    return p


def load_config(args):
    from .pipeline import ExperimentConfig

    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = _parse_set(args.set)
    for key in ("N", "D", "seed", "mode", "threads", "J", "gamma"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.out:
        overrides["output_dir"] = args.out
    return cfg.updated(**overrides)


def _limit_threads(n):
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return None
    return threadpool_limits(limits=n)


def _prepare(pipe, args, need_init=True, need_surrogate=False):
    if getattr(args, "data", None):
        pipe.load_data(args.data)
    else:
        pipe.generate()
    if need_init or need_surrogate:
        pipe.initialize()
    if need_surrogate:
        pipe.build_surrogate()


def cmd_curvature(cfg, args, out: Path):
    from .diagnostics import estimate_curvature, loglog_slope
    from .likelihood import Dataset, generate_dataset
    from .pipeline import build_model

    Ds = [int(x) for x in args.D_list.split(",") if x.strip()]
    truth = cfg.truth
    rows = []
    for D in Ds:
        model = build_model(cfg, D)
        theta = np.zeros(D)
        k = min(D, truth.size)
        theta[:k] = truth[:k]
        if args.data:
            ds = Dataset.load(args.data)
        else:
            ds = generate_dataset(build_model(cfg, truth.size), truth, cfg.N, cfg.seed, noise_scale=0.0)
        rep = estimate_curvature(model, ds, theta, args.radius, args.n_probe, cfg.seed)
        rows.append((D, rep.lambda_min_hat, rep.lambda_max_hat, rep.c_min_hat, rep.c_max_hat))
        log.info("D=%d lambda_min=%.4g", D, rep.lambda_min_hat)
    arr = np.array(rows)
    path = out / "curvature_scaling.csv"
    np.savetxt(path, arr, delimiter=",", comments="", fmt="%.17g",
               header="D,lambda_min_hat,lambda_max_hat,c_min_hat,c_max_hat")
    positive = arr[:, 1] > 0
    slope = loglog_slope(arr[positive, 0], arr[positive, 1]) if positive.sum() >= 2 else float("nan")
    side = {"slope": slope, "target": -4.0 / cfg.dim, "N": cfg.N, "radius": args.radius,
            "noiseless": not bool(args.data), "all_positive": bool(positive.all())}
    path.with_suffix(".json").write_text(json.dumps(side, indent=2) + "\n")
    return [path, path.with_suffix(".json")]


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    stage = args.command
    try:
        cfg = load_config(args)
        from .pipeline import Pipeline

        limiter = _limit_threads(cfg.threads)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # already reported through logging
            pipe = Pipeline(cfg)
        try:
            if stage == "generate":
                pipe.generate()
            elif stage == "init":
                _prepare(pipe, args)
            elif stage == "sample":
                _prepare(pipe, args, need_surrogate=True)
                pipe.sample()
            elif stage == "map":
                _prepare(pipe, args, need_surrogate=True)
                pipe.compute_map()
            elif stage == "bounds":
                _prepare(pipe, args, need_surrogate=True)
                pipe.bounds()
            elif stage == "curvature":
                for path in cmd_curvature(cfg, args, pipe.out):
                    pipe.manifest.record(path, pipe.out)
            elif stage == "pipeline":
                pipe.run_all()
            pipe.finish()
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
        print(json.dumps({"status": "ok", "stage": stage, "output": str(pipe.out)}))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure in stage {stage!r}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"I/O error in stage {stage!r}{f' ({name})' if name else ''}: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv=None):  # pragma: no cover - thin wrapper
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
