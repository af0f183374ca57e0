"""Command-line front end.

Verbs:

* ``simulate`` optimizes one scenario and verifies it by Monte Carlo,
* ``sweep --var {iterations,layers,snr}`` reproduces the figure families,
* ``gradcheck`` validates the closed-form gradient against finite
  differences,
* ``codebook`` runs the random-codebook baseline on one scenario.

Any config field can be overridden with repeated ``--set key=value`` flags
using dotted paths (``--set optimizer.tol=1e-8``). Outputs land in
``--out`` (default: the ``SIMEST_OUTDIR`` environment variable, else the
working directory). Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness, optimizer, reporting
from .errors import ConfigError, GeometryError, NumericalError
from .scenario import apply_overrides, load_scenario
from .seeding import ROLE_CODEBOOK, spawn_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parse_set(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value (got {pair!r})")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = _coerce(raw.strip())
    return overrides


def _coerce(raw: str):
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if raw.startswith("["):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--set: cannot parse list value {raw!r}: {exc}") from exc
    return raw


def _load_config(args):
    config = load_scenario(args.config)
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def _outdir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get("SIMEST_OUTDIR", "."))


def _emit(result, args, stem: str):
    outdir = _outdir(args)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    for fmt in formats:
        written.append(reporting.emit_results(result, fmt, outdir / f"{stem}.{fmt}"))
    if args.plot:
        written.extend(reporting.render_figures(result, outdir, stem=stem))
    for path in written:
        print(f"wrote {path}")
    return written


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    result, best = harness.run_single(config)
    avg = next(r for r in result.records if r.sweep_var == "scenario" and r.user_id == "avg")
    init = next(r for r in result.records if r.sweep_var == "scenario:init")
    init_value = init.nmse_consistent if init.nmse_consistent is not None else init.nmse_paper
    print(
        f"scenario N={config.n} L={config.l} K={config.k} N_t={config.n_t} "
        f"SNR={config.training_snr_db():.1f} dB seed={config.seed}"
    )
    print(f"  average NMSE (all-ones phases):   {init_value:.6g}")
    print(f"  average NMSE (optimized):         {avg.nmse_consistent:.6g}")
    print(f"  Monte Carlo ({config.trials} trials):     {avg.nmse_mc_mean:.6g} +/- {avg.nmse_mc_stderr:.2g}")
    print(f"  full digital bound:               {avg.baseline:.6g}")
    print(f"  optimizer rounds: {best.iterations_used}, converged: {best.converged}")
    _emit(result, args, "scenario")
    if args.plot:
        path = reporting.render_trace_figure(best.objective_trace, _outdir(args))
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    grid = None
    if args.grid:
        grid = args.grid
    if args.var == "layers":
        result = harness.run_layer_sweep(
            config,
            layer_grid=None if grid is None else [int(v) for v in grid],
            workers=args.workers,
        )
    elif args.var == "snr":
        result = harness.run_snr_sweep(
            config,
            snr_grid_db=None if grid is None else [float(v) for v in grid],
            workers=args.workers,
        )
    else:
        pairs = None
        if grid is not None:
            pairs = []
            for token in grid:
                if "x" not in str(token):
                    raise ConfigError(
                        f"--grid for iterations expects NxL tokens (got {token!r})"
                    )
                n, l = str(token).split("x", 1)
                pairs.append((int(n), int(l)))
        result = harness.run_convergence_sweep(config, pairs=pairs)
    print(
        f"sweep var={args.var} points={len(result.grid)} records={len(result.records)} "
        f"hash={result.config_hash} wall={result.wall_time_s:.1f}s"
    )
    _emit(result, args, f"{args.var}_sweep")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    worst, report = harness.gradient_check(
        seed=args.seed if args.seed is not None else 0,
        instances=args.instances,
        mode=args.mode,
    )
    print(f"gradcheck: {len(report)} layer gradients checked, max rel l2 error {worst:.3e}")
    if worst > args.tol:
        offenders = sorted(report, key=lambda r: -r[3])[:5]
        for n, l, layer, err in offenders:
            print(f"  N={n} L={l} layer={layer}: {err:.3e}", file=sys.stderr)
        print(f"gradcheck FAILED (tolerance {args.tol:g})", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"gradcheck passed (tolerance {args.tol:g})")
    return EXIT_OK


def _cmd_codebook(args) -> int:
    config = _load_config(args)
    instance = harness.assemble(config)
    problem = harness.make_problem(instance)
    size = args.size or optimizer.default_codebook_size(config.l, config.n)
    rng = spawn_rng(config.seed, ROLE_CODEBOOK)
    _, best_value = optimizer.codebook_search(rng, problem, size)
    from .geometry import ones_phases

    reference = optimizer.objective_avg_nmse(ones_phases(config.l, config.n), problem)
    print(f"codebook size {size}: best average NMSE {best_value:.6g}")
    print(f"all-ones phases for comparison:  {reference:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simest",
        description="Stacked-metasurface uplink channel estimation simulator",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="scenario file (.toml or .json)")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config field via its dotted path (repeatable)",
    )
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("-o", "--out", help="output directory (default $SIMEST_OUTDIR or .)")
    common.add_argument(
        "--format", choices=("csv", "json", "both"), default="both",
        help="table format(s) to write",
    )
    common.add_argument(
        "--no-plot", dest="plot", action="store_false",
        help="skip rendering figures next to the tables",
    )
    common.add_argument("--workers", type=int, default=1, help="parallel sweep points")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="optimize and verify one scenario")
    sweep = sub.add_parser("sweep", parents=[common], help="run a figure-family sweep")
    sweep.add_argument("--var", choices=("iterations", "layers", "snr"), required=True)
    sweep.add_argument(
        "--grid", nargs="+",
        help="grid points (layers/snr: numbers; iterations: NxL pairs)",
    )
    grad = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    grad.add_argument("--instances", type=int, default=50)
    grad.add_argument("--tol", type=float, default=1e-6)
    grad.add_argument("--mode", choices=("consistent", "paper-literal"), default="consistent")
    codebook = sub.add_parser("codebook", parents=[common], help="random codebook baseline")
    codebook.add_argument("--size", type=int, help="number of candidates (default 10*L*N)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "gradcheck": _cmd_gradcheck,
        "codebook": _cmd_codebook,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, GeometryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
