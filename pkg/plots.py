"""Vector figures for BlockMC Lab results (headless matplotlib)."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from config import PLOT_SETTINGS  # noqa: E402
from equivalence import pt_boundary  # noqa: E402
from freeprob import SpectralLaw  # noqa: E402
from harness import SpectrumCheck, SweepResult  # noqa: E402

logger = logging.getLogger(__name__)

# stable element ids so reruns produce identical SVG
matplotlib.rcParams["svg.hashsalt"] = "blockmc"


def figure_path(out_dir: Path, stem: str) -> Path:
    return Path(out_dir) / f"{stem}.{PLOT_SETTINGS.file_format}"


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format=PLOT_SETTINGS.file_format, metadata={"Date": None})
    plt.close(fig)
    logger.debug("Saved figure %s", path)
    return path


def _boundary_curve(points: int = 201):
    etas = np.linspace(0.0, 1.0, points)
    return etas, np.array([pt_boundary(float(eta)) for eta in etas])


def plot_pt_curve(etas: Sequence[float], betas: Sequence[float], path: Path) -> Path:
    """Worst case phase transition beta_wc(eta)."""
    fig, ax = plt.subplots(figsize=PLOT_SETTINGS.figure_size)
    ax.plot(etas, betas, color="tab:blue", label="beta_wc")
    ax.fill_between(etas, 0.0, betas, color="tab:blue", alpha=0.15, label="recoverable")
    ax.set_xlabel("eta = l / n")
    ax.set_ylabel("beta = k / n")
    ax.set_xlim(min(etas), max(etas))
    ax.set_ylim(0.0, 0.55)
    ax.set_title("Worst case phase transition")
    ax.legend(loc="upper center")
    return _save(fig, path)


def plot_rmse_vs_beta(result: SweepResult, path: Path) -> Path:
    """Mean scaled RMSE per beta with error bars and the theoretical xi."""
    betas = [cell.beta for cell in result.cells]
    fig, ax = plt.subplots(figsize=PLOT_SETTINGS.figure_size)
    ax.errorbar(
        betas,
        [cell.mean for cell in result.cells],
        yerr=[2.0 * cell.std_error for cell in result.cells],
        fmt="o-",
        capsize=3,
        label="simulated (2 s.e.)",
    )
    theory = [(cell.beta, cell.theory_xi) for cell in result.cells if cell.theory_xi is not None]
    if theory:
        ax.plot(*zip(*theory), "s--", color="black", label="theory xi")
    ax.set_xlabel("beta")
    ax.set_ylabel("scaled RMSE")
    ax.set_title(f"Scaled RMSE, eta={result.cells[0].eta:g}")
    ax.legend()
    return _save(fig, path)


def plot_magnitude_sweep(result: SweepResult, path: Path) -> Path:
    """Mean scaled RMSE against the dominant-to-tail magnitude ratio."""
    fig, ax = plt.subplots(figsize=PLOT_SETTINGS.figure_size)
    ax.errorbar(
        [cell.ratio for cell in result.cells],
        [cell.mean for cell in result.cells],
        yerr=[2.0 * cell.std_error for cell in result.cells],
        fmt="o-",
        capsize=3,
        label="simulated (2 s.e.)",
    )
    xi = result.cells[0].theory_xi
    if xi is not None:
        ax.axhline(xi, color="black", linestyle="--", label=f"theory xi = {xi:.3f}")
    ax.set_xscale("log")
    ax.set_xlabel("sigma_mag / sigma_eps")
    ax.set_ylabel("scaled RMSE")
    ax.set_title(f"Magnitude sweep, beta={result.cells[0].beta:g}, eta={result.cells[0].eta:g}")
    ax.legend()
    return _save(fig, path)


def plot_pt_success(result: SweepResult, path: Path) -> Path:
    """Empirical success rate per (eta, beta) cell over the theoretical boundary."""
    fig, ax = plt.subplots(figsize=PLOT_SETTINGS.figure_size)
    points = ax.scatter(
        [cell.eta for cell in result.cells],
        [cell.beta for cell in result.cells],
        c=[cell.success_rate for cell in result.cells],
        cmap="viridis",
        vmin=0.0,
        vmax=1.0,
        s=60,
        marker="s",
    )
    fig.colorbar(points, ax=ax, label="success rate")
    etas, betas = _boundary_curve()
    ax.plot(etas, betas, color="red", label="beta_wc")
    ax.set_xlabel("eta")
    ax.set_ylabel("beta")
    ax.set_title(f"Exact recovery rate, n={result.cells[0].n}")
    ax.legend(loc="upper center")
    return _save(fig, path)


def plot_density(
    law: SpectralLaw,
    path: Path,
    check: Optional[SpectrumCheck] = None,
    points: int = PLOT_SETTINGS.density_points,
) -> Path:
    """Bulk density with the delta masses noted, optionally over a histogram."""
    fig, ax = plt.subplots(figsize=PLOT_SETTINGS.figure_size)
    x = np.linspace(0.0, 1.0, points)[1:-1]
    ax.plot(x, law.density(x), color="black", label="bulk density")
    if check is not None:
        edges = np.asarray(check.bin_edges)
        widths = np.diff(edges)
        heights = np.divide(
            np.asarray(check.empirical_masses),
            widths,
            out=np.zeros_like(widths),
            where=widths > 0,
        )
        ax.bar(edges[:-1], heights, width=widths, align="edge", alpha=0.4, label=f"empirical n={check.n}")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.set_title(f"beta={law.beta:g}, eta={law.eta:g}: f0={law.f0:.3f}, f1={law.f1:.3f}")
    ax.legend()
    return _save(fig, path)


def plot_singular_values(values: Sequence[float], path: Path) -> Path:
    """Sorted singular value spectrum of an inspected matrix."""
    fig, ax = plt.subplots(figsize=PLOT_SETTINGS.figure_size)
    index = np.arange(1, len(values) + 1)
    ax.bar(index, values, color="tab:blue")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.set_title("Singular value spectrum")
    return _save(fig, path)
