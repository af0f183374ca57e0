"""Result emission: delimited tables, JSON mirrors and rendered figures.

The CSV layout is fixed:

    sweep_var, sweep_value, user_id|avg, nmse_paper, nmse_consistent,
    nmse_mc_mean, nmse_mc_stderr, baseline, iterations, seed

Numbers are written with 17 significant digits so the table round-trips
float64 exactly; empty cells stand for fields a record does not carry.
The JSON mirror adds the grid, config hash, seed and wall time, and is the
format the loader checks the config hash against.
"""

import csv
import json
from dataclasses import asdict
from pathlib import Path

from .errors import ConfigError
from .harness import SweepRecord, SweepResult

CSV_COLUMNS = (
    "sweep_var",
    "sweep_value",
    "user_id|avg",
    "nmse_paper",
    "nmse_consistent",
    "nmse_mc_mean",
    "nmse_mc_stderr",
    "baseline",
    "iterations",
    "seed",
)

_FIELD_ORDER = (
    "sweep_var", "sweep_value", "user_id", "nmse_paper", "nmse_consistent",
    "nmse_mc_mean", "nmse_mc_stderr", "baseline", "iterations", "seed",
)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_results(result: SweepResult, fmt: str, path) -> Path:
    """Write the result as ``csv`` or ``json`` to ``path``."""
    path = Path(path)
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(CSV_COLUMNS)
                for record in result.records:
                    writer.writerow(
                        _format_cell(getattr(record, name)) for name in _FIELD_ORDER
                    )
        elif fmt == "json":
            payload = {
                "variable": result.variable,
                "grid": list(result.grid),
                "config_hash": result.config_hash,
                "seed": result.seed,
                "wall_time_s": result.wall_time_s,
                "records": [asdict(r) for r in result.records],
            }
            with open(path, "w") as handle:
                json.dump(payload, handle, indent=1)
                handle.write("\n")
        else:
            raise ValueError(f"unknown output format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def load_results(path, expect_config_hash: str | None = None) -> SweepResult:
    """Read a JSON result back; optionally insist on a config hash match."""
    path = Path(path)
    with open(path) as handle:
        payload = json.load(handle)
    if expect_config_hash is not None and payload["config_hash"] != expect_config_hash:
        raise ConfigError(
            f"{path}: config hash {payload['config_hash']} does not match "
            f"expected {expect_config_hash}; refusing to resume"
        )
    records = [SweepRecord(**r) for r in payload["records"]]
    return SweepResult(
        variable=payload["variable"],
        grid=payload["grid"],
        records=records,
        config_hash=payload["config_hash"],
        seed=payload["seed"],
        wall_time_s=payload["wall_time_s"],
    )


def _series(result: SweepResult, var_prefix: str, user_id: str = "avg"):
    """(x, y) pairs of one record family, ordered by sweep value."""
    points = [
        (r.sweep_value, r)
        for r in result.records
        if r.sweep_var == var_prefix and r.user_id == user_id
    ]
    points.sort(key=lambda pair: pair[0])
    return points


def render_figures(result: SweepResult, outdir, stem: str | None = None) -> list:
    """Render the sweep's figure family to PNG next to the tables.

    Returns the written paths. Unknown sweep variables yield no figure.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"nmse_vs_{result.variable}"
    written = []

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    if result.variable == "iterations":
        tags = sorted({r.sweep_var for r in result.records})
        for tag in tags:
            points = _series(result, tag)
            values = [
                r.nmse_consistent if r.nmse_consistent is not None else r.nmse_paper
                for _, r in points
            ]
            label = tag.replace("iteration", "").strip("()") or tag
            ax.semilogy([x for x, _ in points], values, label=label)
        ax.set_xlabel("iteration")
    elif result.variable in ("layers", "snr"):
        optimized = _series(result, result.variable)
        xs = [x for x, _ in optimized]
        ax.semilogy(xs, [r.nmse_consistent for _, r in optimized], "o-", label="optimized")
        mc = [(x, r) for x, r in optimized if r.nmse_mc_mean is not None]
        if mc:
            ax.errorbar(
                [x for x, _ in mc],
                [r.nmse_mc_mean for _, r in mc],
                yerr=[3.0 * r.nmse_mc_stderr for _, r in mc],
                fmt="x", color="k", label="Monte Carlo (3 s.e.)",
            )
        codebook = _series(result, f"{result.variable}:codebook")
        if codebook:
            ax.semilogy(
                [x for x, _ in codebook],
                [r.nmse_consistent for _, r in codebook],
                "s--", label="codebook",
            )
        for tag, style in (("kappa0", ":"), ("kappa10", "-.")):
            variant = _series(result, f"{result.variable}:{tag}")
            if variant:
                ax.semilogy(
                    [x for x, _ in variant],
                    [r.nmse_consistent for _, r in variant],
                    style, label=tag.replace("kappa", "Rician factor "),
                )
        bounds = [(x, r.baseline) for x, r in optimized if r.baseline is not None]
        if bounds:
            ax.semilogy(
                [x for x, _ in bounds], [b for _, b in bounds],
                "--", color="gray", label="full digital bound",
            )
        ax.set_xlabel("layers" if result.variable == "layers" else "training SNR (dB)")
    elif result.variable == "scenario":
        rows = [r for r in result.records if r.user_id != "avg" and r.sweep_var == "scenario"]
        ids = [r.user_id for r in rows]
        ax.bar(ids, [r.nmse_consistent for r in rows], label="per user")
        avg = next(r for r in result.records if r.user_id == "avg" and r.sweep_var == "scenario")
        ax.axhline(avg.nmse_consistent, color="k", linestyle="--", label="average")
        ax.set_yscale("log")
        ax.set_xlabel("user")
    else:
        plt.close(fig)
        return written

    ax.set_ylabel("average NMSE")
    ax.grid(True, which="both", linestyle=":", linewidth=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    target = outdir / f"{stem}.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    written.append(target)
    return written


def render_trace_figure(trace, outdir, stem: str = "convergence") -> Path:
    """Objective trace of a single optimizer run."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.semilogy([i for i, _ in trace], [v for _, v in trace])
    ax.set_xlabel("iteration")
    ax.set_ylabel("average NMSE")
    ax.grid(True, which="both", linestyle=":", linewidth=0.6)
    fig.tight_layout()
    target = outdir / f"{stem}.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target
