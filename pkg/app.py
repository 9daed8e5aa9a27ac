"""
BlockMC Lab - nuclear norm completion under block missingness.
Command line entry point for theory evaluations, experiments and matrix inspection.
"""
from __future__ import annotations

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
import numpy as np
from scipy import linalg

import export
import plots
import records
import store
from config import HARNESS_SETTINGS, PATHS, PLOT_SETTINGS, ConfigError, validate_config
from equivalence import pt_boundary
from freeprob import SpectralLaw
from harness import (
    ExperimentConfig,
    run_magnitude_sweep,
    run_pt_sweep,
    run_rmse_table,
    run_spectrum_check,
)
from rmse import theoretical_xi
from version import __version__

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """Map validation failures to exit code 2 and numerical failures to 1."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            logger.error("Invalid configuration (%s problem(s))", len(exc.errors))
            for message in exc.errors:
                click.echo(f"config error: {message}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except np.linalg.LinAlgError as exc:
            logger.error("Linear algebra failure: %s", exc)
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_RUNTIME)
        except ValueError as exc:
            logger.error("%s", exc)
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except RuntimeError as exc:
            logger.error("%s", exc)
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_RUNTIME)

    return wrapper


def _out_option(func: Callable[..., Any]) -> Callable[..., Any]:
    return click.option(
        "--out",
        "-o",
        "out_dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=PATHS.default_out_dir,
        show_default=True,
        help="Output directory",
    )(func)


def _plots_option(func: Callable[..., Any]) -> Callable[..., Any]:
    return click.option("--no-plots", is_flag=True, help="Skip figure files")(func)


@click.group()
@click.version_option(__version__, prog_name="blockmc")
@click.option("--verbose", "-v", is_flag=True, help="Log solver iterations and other debug output")
def cli(verbose: bool) -> None:
    """BlockMC Lab - nuclear norm completion with a block missing not at random."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


# ---------------------------------------------------------------------------
# Theory commands
# ---------------------------------------------------------------------------

def _write_manifest(
    command: str,
    config: Dict[str, Any],
    outputs: List[str],
    out_dir: Path,
) -> records.RunManifest:
    manifest = records.RunManifest.create(command, config, tuple(outputs))
    export.write_json(out_dir / "manifest.json", manifest.to_dict())
    click.echo(f"run {manifest.run_id}: wrote {', '.join(outputs + ['manifest.json'])} to {out_dir}")
    return manifest


def _pt_grid(eta_min: float, eta_max: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0.0 <= eta_min <= eta_max <= 1.0:
        raise ValueError(f"need 0 <= eta_min <= eta_max <= 1, got [{eta_min}, {eta_max}]")
    if steps == 1:
        if eta_min != eta_max:
            raise ValueError("a single step needs eta_min == eta_max")
        return np.array([eta_min])
    if eta_min == eta_max:
        raise ValueError(f"empty eta range [{eta_min}, {eta_max}] for {steps} steps")
    return np.linspace(eta_min, eta_max, steps)


@cli.command("pt-curve")
@click.option("--eta-min", type=float, default=0.0, show_default=True)
@click.option("--eta-max", type=float, default=1.0, show_default=True)
@click.option("--steps", type=int, default=101, show_default=True)
@_out_option
@_plots_option
@_handle_errors
def pt_curve(eta_min: float, eta_max: float, steps: int, out_dir: Path, no_plots: bool) -> None:
    """Write the worst case phase transition beta_wc(eta)."""
    etas = _pt_grid(eta_min, eta_max, steps)
    config = {"kind": "pt_curve", "eta_min": eta_min, "eta_max": eta_max, "steps": steps}
    run_id = records.compute_run_id(config)
    rows = [
        {"run_id": run_id, "eta": float(eta), "beta_wc": pt_boundary(float(eta))} for eta in etas
    ]
    export.ensure_out_dir(out_dir)
    export.write_csv(out_dir / "pt_curve.csv", records.PT_CURVE_COLUMNS, rows)
    outputs = ["pt_curve.csv"]
    if not no_plots and len(rows) > 1:
        figure = plots.plot_pt_curve(
            [row["eta"] for row in rows],
            [row["beta_wc"] for row in rows],
            plots.figure_path(out_dir, "pt_curve"),
        )
        outputs.append(figure.name)
    _write_manifest("pt-curve", config, outputs, out_dir)


@cli.command("rmse-theory")
@click.option("--beta", type=float, required=True)
@click.option("--eta", type=float, required=True)
@click.option("--sigma-eps", type=float, default=HARNESS_SETTINGS.sigma_eps, show_default=True)
@click.option(
    "--out",
    "-o",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write rmse_theory.json here",
)
@_handle_errors
def rmse_theory(beta: float, eta: float, sigma_eps: float, out_dir: Optional[Path]) -> None:
    """Print the worst case scaled RMSE xi."""
    xi = theoretical_xi(beta, eta, sigma_eps)
    click.echo(f"xi = {xi:.3f}")
    if out_dir is not None:
        config = {"kind": "rmse_theory", "beta": beta, "eta": eta, "sigma_eps": sigma_eps}
        export.ensure_out_dir(out_dir)
        payload = {
            "run_id": records.compute_run_id(config),
            "beta": beta,
            "eta": eta,
            "sigma_eps": sigma_eps,
            "xi": xi,
            "beta_wc": pt_boundary(eta),
            "version": __version__,
        }
        export.write_json(out_dir / "rmse_theory.json", payload)
        _write_manifest("rmse-theory", config, ["rmse_theory.json"], out_dir)


def _density_grid(points: int) -> np.ndarray:
    if points < 2:
        raise ValueError(f"grid_points must be >= 2, got {points}")
    return np.linspace(0.0, 1.0, points + 2)[1:-1]


@cli.command("spectrum-theory")
@click.option("--beta", type=float, required=True)
@click.option("--eta", type=float, required=True)
@click.option("--grid-points", type=int, default=PLOT_SETTINGS.density_points, show_default=True)
@_out_option
@_plots_option
@_handle_errors
def spectrum_theory(
    beta: float,
    eta: float,
    grid_points: int,
    out_dir: Path,
    no_plots: bool,
) -> None:
    """Tabulate the limiting spectral law of the projector product."""
    law = SpectralLaw.from_ratios(beta, eta)
    law.validate()
    grid = _density_grid(grid_points)
    density = law.density(grid)
    config = {"kind": "spectrum_theory", "beta": beta, "eta": eta, "grid_points": grid_points}
    run_id = records.compute_run_id(config)
    export.ensure_out_dir(out_dir)
    preamble = [f"{key}={value!r}" for key, value in law.to_dict().items()]
    rows = [
        {"run_id": run_id, "x": float(x), "density": float(d)} for x, d in zip(grid, density)
    ]
    export.write_csv(
        out_dir / "spectrum_theory.csv",
        records.DENSITY_COLUMNS,
        rows,
        preamble=preamble,
    )
    outputs = ["spectrum_theory.csv"]
    click.echo(f"f0={law.f0:.6g} f1={law.f1:.6g} x_l={law.x_l:.6g} x_u={law.x_u:.6g}")
    if not no_plots:
        figure = plots.plot_density(law, plots.figure_path(out_dir, "spectrum_theory"))
        outputs.append(figure.name)
    _write_manifest("spectrum-theory", config, outputs, out_dir)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _apply_overrides(
    raw: Dict[str, Any],
    seed: Optional[int],
    trials: Optional[int],
) -> Dict[str, Any]:
    raw = dict(raw)
    raw.pop("threads", None)
    if seed is not None:
        raw["seed" if raw.get("kind") == "spectrum_check" else "master_seed"] = seed
    if trials is not None:
        if raw.get("kind") == "spectrum_check":
            logger.warning("--trials has no effect on spectrum checks")
        else:
            raw["trials"] = trials
    return validate_config(raw)


def resolve_config(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Fill defaults so the manifest carries every setting that shaped the results."""
    kind = raw["kind"]
    if kind == "spectrum_check":
        return {
            "kind": kind,
            "n": raw["n"],
            "beta": raw["beta"],
            "eta": raw["eta"],
            "bins": raw.get("bins", HARNESS_SETTINGS.spectrum_bins),
            "seed": raw.get("seed", 0),
        }
    experiment = ExperimentConfig.from_dict(raw)
    resolved: Dict[str, Any] = {
        "kind": kind,
        "n": experiment.n,
        "master_seed": experiment.master_seed,
        "trials": experiment.trials,
        "mode": experiment.mode.value,
        "dominant_profile": experiment.dominant_profile.value,
        "solver": experiment.solver.to_dict(),
    }
    if kind == "pt_sweep":
        resolved.update(
            {
                "beta_grid": list(raw["beta_grid"]),
                "eta_grid": list(raw["eta_grid"]),
                "success_threshold": raw.get(
                    "success_threshold", HARNESS_SETTINGS.success_threshold
                ),
            }
        )
        return resolved
    resolved.update(
        {
            "eta": experiment.eta,
            "beta_list": list(experiment.beta_list),
            "tail_profile": experiment.tail_profile.value,
            "sigma_ratio": experiment.sigma_ratio,
            "sigma_eps": experiment.sigma_eps,
            "normalize_tail_norm": experiment.normalize_tail_norm,
        }
    )
    if kind == "magnitude_sweep":
        resolved["ratios"] = list(raw["ratios"])
    return resolved


def _record_ledger(
    ledger_path: Path,
    manifest: records.RunManifest,
    out_dir: Path,
    cells: List[Dict[str, Any]],
) -> None:
    conn = store.get_connection(ledger_path)
    try:
        run_pk = store.start_run(
            conn,
            manifest.run_id,
            manifest.command,
            manifest.config,
            manifest.version,
            out_dir,
        )
        for summary, trials in cells:
            store.add_cell(conn, run_pk, summary, trials)
        store.end_run(conn, run_pk)
        logger.info("Recorded run %s in ledger %s", manifest.run_id, ledger_path)
    finally:
        conn.close()


def _ledger_cells(result: Any, run_id: str) -> List[Any]:
    trials = records.trial_rows(result, run_id)
    cells = []
    for cell in result.cells:
        summary = {
            "cell_index": cell.cell_index,
            "beta": cell.beta,
            "eta": cell.eta,
            "ratio": cell.ratio,
            "mean_value": cell.mean,
            "std_error": cell.std_error,
            "theory_xi": cell.theory_xi,
            "success_rate": cell.success_rate,
            "trial_count": len(cell.trials),
        }
        cells.append((summary, [row for row in trials if row["cell_index"] == cell.cell_index]))
    return cells


def _run_experiment(
    config: Dict[str, Any],
    threads: Optional[int],
    out_dir: Path,
    run_id: str,
    no_plots: bool,
):
    kind = config["kind"]
    outputs: List[str] = []
    if kind == "spectrum_check":
        check = run_spectrum_check(
            config["n"], config["beta"], config["eta"], config["bins"], config["seed"]
        )
        export.write_csv(
            out_dir / f"{kind}.csv",
            records.SPECTRUM_CHECK_COLUMNS,
            records.spectrum_rows(check, run_id),
        )
        export.write_json(out_dir / f"{kind}.json", records.spectrum_payload(check, run_id))
        outputs += [f"{kind}.csv", f"{kind}.json"]
        if not no_plots:
            figure = plots.plot_density(check.law, plots.figure_path(out_dir, "spectrum_density"), check)
            outputs.append(figure.name)
        click.echo(
            f"zero fraction {check.zero_fraction:.4f} (f0={check.law.f0:.4f}), "
            f"one count {check.one_count}/{check.expected_one_count}, bulk L1 {check.bulk_l1:.4f}"
        )
        return outputs, []

    experiment = ExperimentConfig.from_dict(dict(config, threads=threads))
    if kind == "rmse_table":
        result = run_rmse_table(experiment)
    elif kind == "magnitude_sweep":
        result = run_magnitude_sweep(experiment, config["ratios"])
    else:
        result = run_pt_sweep(
            experiment,
            config["beta_grid"],
            config["eta_grid"],
            config["success_threshold"],
        )
    payloads = records.cell_payloads(result, run_id)
    export.write_csv(
        out_dir / f"{kind}.csv",
        records.RESULT_COLUMNS[kind],
        [payload.to_dict() for payload in payloads],
    )
    export.write_json(out_dir / f"{kind}.json", records.sweep_payload(result, run_id))
    outputs += [f"{kind}.csv", f"{kind}.json"]
    if not no_plots:
        if kind == "rmse_table":
            figure = plots.plot_rmse_vs_beta(result, plots.figure_path(out_dir, "rmse_vs_beta"))
        elif kind == "magnitude_sweep":
            figure = plots.plot_magnitude_sweep(result, plots.figure_path(out_dir, "magnitude_sweep"))
        else:
            figure = plots.plot_pt_success(result, plots.figure_path(out_dir, "pt_success"))
        outputs.append(figure.name)
    for payload in payloads:
        row = payload.to_dict()
        if kind == "pt_sweep":
            click.echo(
                f"beta={row['beta']:g} eta={row['eta']:g}: success {row['success_rate']:.2f}, "
                f"certificate {row['certificate_rate']:.2f}"
            )
        else:
            xi = row["theory_xi"]
            click.echo(
                f"beta={row['beta']:g} eta={row['eta']:g}"
                + (f" ratio={row['ratio']:g}" if "ratio" in row else "")
                + f": mean {row['mean_scaled_rmse']:.3f} +/- {row['std_error']:.3f}"
                + ("" if xi is None else f" (theory {xi:.3f})")
            )
    return outputs, _ledger_cells(result, run_id)


@cli.command("run")
@click.option(
    "--config",
    "-c",
    "config_file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
    help="Experiment config (JSON) or a manifest.json from an earlier run",
)
@_out_option
@click.option("--seed", type=int, default=None, help="Override master_seed (seed for spectrum checks)")
@click.option("--trials", type=int, default=None, help="Override the trial count")
@click.option("--threads", type=int, default=None, help="Worker threads (default: $BLOCKMC_THREADS or 1)")
@_plots_option
@click.option("--no-ledger", is_flag=True, help="Do not record the run in the ledger")
@click.option(
    "--ledger",
    "ledger_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=PATHS.ledger_path,
    show_default=True,
)
@_handle_errors
def run_cmd(
    config_file: Path,
    out_dir: Path,
    seed: Optional[int],
    trials: Optional[int],
    threads: Optional[int],
    no_plots: bool,
    no_ledger: bool,
    ledger_path: Path,
) -> None:
    """Run a Monte-Carlo experiment described by a config file."""
    raw = export.load_config(config_file)
    if threads is None:
        threads = raw.get("threads")
    config = resolve_config(_apply_overrides(raw, seed, trials))
    run_id = records.compute_run_id(config)
    export.ensure_out_dir(out_dir)
    logger.info("Run %s: %s -> %s", run_id, config["kind"], out_dir)

    outputs, cells = _run_experiment(config, threads, out_dir, run_id, no_plots)
    manifest = _write_manifest("run", config, outputs, out_dir)
    if not no_ledger:
        _record_ledger(ledger_path, manifest, out_dir, cells)


# ---------------------------------------------------------------------------
# Data inspection and ledger
# ---------------------------------------------------------------------------

@cli.command("inspect")
@click.argument("matrix_csv", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@_out_option
@_plots_option
@_handle_errors
def inspect_cmd(matrix_csv: Path, out_dir: Path, no_plots: bool) -> None:
    """Report the singular value spectrum of a headerless numeric CSV matrix."""
    matrix = export.read_matrix_csv(matrix_csv)
    values = linalg.svdvals(matrix)
    largest = float(values[0])
    dominant = int(np.sum(values > 0.1 * largest)) if largest > 0 else 0
    runner_up = float(values[1]) if values.size > 1 else 0.0
    config = {
        "kind": "inspect",
        "source": str(matrix_csv),
        "source_sha256": export.file_sha256(matrix_csv),
    }
    run_id = records.compute_run_id(config)
    export.ensure_out_dir(out_dir)
    rows = [
        {"run_id": run_id, "index": idx + 1, "singular_value": float(value)}
        for idx, value in enumerate(values)
    ]
    export.write_csv(out_dir / "singular_values.csv", records.SINGULAR_VALUE_COLUMNS, rows)
    outputs = ["singular_values.csv", "inspect.json"]
    summary = {
        "run_id": run_id,
        "source": str(matrix_csv),
        "rows": int(matrix.shape[0]),
        "cols": int(matrix.shape[1]),
        "largest": largest,
        "second": runner_up,
        "dominance_ratio": largest / runner_up if runner_up > 0 else None,
        "count_above_10pct": dominant,
        "nuclear_norm": float(np.sum(values)),
    }
    export.write_json(out_dir / "inspect.json", summary)
    click.echo(
        f"{matrix.shape[0]}x{matrix.shape[1]}: largest {largest:.6g}, "
        f"{dominant} value(s) above 10% of it"
    )
    if not no_plots:
        figure = plots.plot_singular_values(values, plots.figure_path(out_dir, "singular_values"))
        outputs.append(figure.name)
    _write_manifest("inspect", config, outputs, out_dir)


@cli.command("history")
@click.option("--limit", type=int, default=20, show_default=True)
@click.option("--delete", "delete_id", type=int, default=None, help="Delete a ledger entry by id")
@click.option(
    "--ledger",
    "ledger_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=PATHS.ledger_path,
    show_default=True,
)
@_handle_errors
def history(limit: int, delete_id: Optional[int], ledger_path: Path) -> None:
    """List recorded runs, newest first."""
    conn = store.get_connection(ledger_path)
    try:
        if delete_id is not None:
            if store.get_run(conn, delete_id) is None:
                raise ValueError(f"no run with id {delete_id}")
            store.delete_run(conn, delete_id)
            click.echo(f"deleted run {delete_id}")
            return
        runs = store.get_all_runs(conn, limit=limit)
        if not runs:
            click.echo("no runs recorded")
            return
        for entry in runs:
            status = "" if entry.is_complete else " (incomplete)"
            click.echo(
                f"{entry.id:>4}  {entry.run_id}  {entry.kind:<16} seed={entry.master_seed}  "
                f"cells={len(store.get_cells(conn, entry.id))} "
                f"trials={store.get_trial_count(conn, entry.id)}  {entry.started_at}{status}"
            )
    finally:
        conn.close()


def main() -> None:
    """Run the CLI entrypoint."""
    cli(prog_name="blockmc")


if __name__ == "__main__":
    main()
