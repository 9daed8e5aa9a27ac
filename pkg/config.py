"""Shared configuration and defaults for the BlockMC Lab modules."""
from __future__ import annotations

from dataclasses import dataclass, field
import os
from pathlib import Path
import sys
from typing import Any, Dict, List, Mapping, Optional, Tuple


def _resolve_base_dir() -> Path:
    """Return the base directory for runtime data."""
    if getattr(sys, "frozen", False):
        return Path(sys.executable).parent
    return Path(__file__).parent


BASE_DIR = _resolve_base_dir()
DATA_DIR = BASE_DIR / "data"

THREADS_ENV = "BLOCKMC_THREADS"


class ConfigError(ValueError):
    """Experiment configuration rejected; carries every violation found."""

    def __init__(self, errors: List[str]) -> None:
        self.errors: Tuple[str, ...] = tuple(errors)
        super().__init__("; ".join(self.errors) or "invalid configuration")


@dataclass(frozen=True)
class PathSettings:
    """Filesystem paths used by the application."""

    data_dir: Path = DATA_DIR
    ledger_path: Path = DATA_DIR / "ledger.db"
    default_out_dir: Path = Path("results")


@dataclass(frozen=True)
class SolverSettings:
    """Defaults for the nuclear-norm completion solver."""

    max_iters: int = 20000
    rel_tol: float = 1e-9
    step: float = 0.1
    log_every: int = 500
    stall_window: int = 5


@dataclass(frozen=True)
class HarnessSettings:
    """Monte-Carlo experiment defaults."""

    trials: int = 50
    n: int = 40
    eta: float = 0.9
    beta_list: Tuple[float, ...] = (0.05, 0.1, 0.15, 0.2)
    sigma_ratio: float = 50.0
    sigma_eps: float = 1.0
    magnitude_ratios: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 6.0)
    success_threshold: float = 1e-3
    spectrum_bins: int = 50
    min_spectrum_n: int = 500
    default_threads: int = 1


@dataclass(frozen=True)
class TheorySettings:
    """Numerical tolerances for the closed-form theory."""

    discriminant_clamp: float = 1e-14
    quad_epsrel: float = 1e-10
    quad_limit: int = 200
    fallback_nodes: int = 400
    normalization_tol: float = 1e-8
    orthonormal_tol: float = 1e-8
    pinv_rcond: float = 1e-12
    oracle_min_singular: float = 1e-10
    boundary_slack: float = 1e-12
    eigen_zero_tol: float = 1e-8


@dataclass(frozen=True)
class PlotSettings:
    """Figure output defaults."""

    file_format: str = "svg"
    figure_size: Tuple[float, float] = (6.4, 4.2)
    density_points: int = 801


@dataclass(frozen=True)
class LedgerSettings:
    """Run ledger database configuration."""

    pragmas: Mapping[str, str] = field(
        default_factory=lambda: {
            "foreign_keys": "ON",
            "journal_mode": "WAL",
            "synchronous": "NORMAL",
            "temp_store": "MEMORY",
            "busy_timeout": "5000",
        }
    )
    value_precision: int = 12


PATHS = PathSettings()
SOLVER_SETTINGS = SolverSettings()
HARNESS_SETTINGS = HarnessSettings()
THEORY_SETTINGS = TheorySettings()
PLOT_SETTINGS = PlotSettings()
LEDGER_SETTINGS = LedgerSettings()


def resolve_threads(requested: Optional[int] = None) -> int:
    """Return the worker count from the request, the environment, or defaults."""
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError([f"{THREADS_ENV} must be an integer, got {raw!r}"])
    return HARNESS_SETTINGS.default_threads


# ---------------------------------------------------------------------------
# Experiment config files
# ---------------------------------------------------------------------------

KINDS = ("rmse_table", "magnitude_sweep", "pt_sweep", "spectrum_check")
MODES = ("worst_case_symmetric", "asymmetric")
TAIL_PROFILES = ("flat", "gaussian", "uniform")
DOMINANT_PROFILES = ("constant", "uniform")

_COMMON_KEYS = ("kind", "n", "master_seed", "trials", "threads")
_INSTANCE_KEYS = (
    "eta",
    "beta_list",
    "mode",
    "tail_profile",
    "sigma_ratio",
    "sigma_eps",
    "normalize_tail_norm",
    "dominant_profile",
    "solver",
)
_SOLVER_KEYS = ("max_iters", "rel_tol", "step", "log_every")

ALLOWED_KEYS: Dict[str, Tuple[str, ...]] = {
    "rmse_table": _COMMON_KEYS + _INSTANCE_KEYS,
    "magnitude_sweep": _COMMON_KEYS + _INSTANCE_KEYS + ("ratios",),
    "pt_sweep": _COMMON_KEYS
    + ("mode", "beta_grid", "eta_grid", "success_threshold", "dominant_profile", "solver"),
    "spectrum_check": ("kind", "n", "beta", "eta", "bins", "seed", "threads"),
}


def round_half_up(value: float) -> int:
    """Round a non-negative value to the nearest integer, halves going up."""
    return int(value + 0.5 + 1e-9)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _check_ratio_list(raw: Dict[str, Any], key: str, errors: List[str]) -> List[float]:
    value = raw.get(key)
    if not isinstance(value, list) or not value:
        errors.append(f"{key}: expected a non-empty list of numbers")
        return []
    out: List[float] = []
    for idx, item in enumerate(value):
        if not _is_number(item) or not 0.0 <= float(item) <= 1.0:
            errors.append(f"{key}[{idx}]: expected a number in [0, 1], got {item!r}")
            continue
        out.append(float(item))
    return out


def _check_solver(raw: Any, errors: List[str]) -> None:
    if not isinstance(raw, dict):
        errors.append("solver: expected an object")
        return
    for key in raw:
        if key not in _SOLVER_KEYS:
            errors.append(f"solver.{key}: unknown key")
    if "max_iters" in raw and (not _is_int(raw["max_iters"]) or raw["max_iters"] < 1):
        errors.append("solver.max_iters: expected an integer >= 1")
    if "log_every" in raw and (not _is_int(raw["log_every"]) or raw["log_every"] < 1):
        errors.append("solver.log_every: expected an integer >= 1")
    for key in ("rel_tol", "step"):
        if key in raw and (not _is_number(raw[key]) or raw[key] <= 0):
            errors.append(f"solver.{key}: expected a number > 0")


def _check_choice(
    raw: Dict[str, Any],
    key: str,
    choices: Tuple[str, ...],
    errors: List[str],
) -> None:
    if key in raw and raw[key] not in choices:
        errors.append(f"{key}: expected one of {', '.join(choices)}, got {raw[key]!r}")


def validate_config(raw: Any) -> Dict[str, Any]:
    """Validate an experiment config tree and return it; raise ConfigError listing all problems."""
    if not isinstance(raw, dict):
        raise ConfigError(["config root: expected an object"])
    errors: List[str] = []
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError([f"kind: expected one of {', '.join(KINDS)}, got {kind!r}"])

    allowed = ALLOWED_KEYS[kind]
    for key in raw:
        if key not in allowed:
            errors.append(f"{key}: unknown key for kind {kind}")

    n = raw.get("n")
    if not _is_int(n) or n < 1:
        errors.append("n: expected an integer >= 1")
        n = None
    if "threads" in raw and (not _is_int(raw["threads"]) or raw["threads"] < 1):
        errors.append("threads: expected an integer >= 1")

    if kind == "spectrum_check":
        for key in ("beta", "eta"):
            if not _is_number(raw.get(key)) or not 0.0 <= float(raw[key]) <= 1.0:
                errors.append(f"{key}: expected a number in [0, 1]")
        if "bins" in raw and (not _is_int(raw["bins"]) or raw["bins"] < 1):
            errors.append("bins: expected an integer >= 1")
        if "seed" in raw and (not _is_int(raw["seed"]) or not 0 <= raw["seed"] < 2 ** 64):
            errors.append("seed: expected an integer in [0, 2^64)")
        if n is not None and n < HARNESS_SETTINGS.min_spectrum_n:
            errors.append(f"n: spectrum checks need n >= {HARNESS_SETTINGS.min_spectrum_n}")
        if errors:
            raise ConfigError(errors)
        return raw

    if not _is_int(raw.get("master_seed")) or not 0 <= raw["master_seed"] < 2 ** 64:
        errors.append("master_seed: expected an integer in [0, 2^64)")
    if "trials" in raw and (not _is_int(raw["trials"]) or raw["trials"] < 1):
        errors.append("trials: expected an integer >= 1")
    _check_choice(raw, "mode", MODES, errors)
    _check_choice(raw, "tail_profile", TAIL_PROFILES, errors)
    _check_choice(raw, "dominant_profile", DOMINANT_PROFILES, errors)
    if "solver" in raw:
        _check_solver(raw["solver"], errors)

    if kind == "pt_sweep":
        betas = _check_ratio_list(raw, "beta_grid", errors)
        etas = _check_ratio_list(raw, "eta_grid", errors)
        threshold = raw.get("success_threshold", HARNESS_SETTINGS.success_threshold)
        if not _is_number(threshold) or threshold <= 0:
            errors.append("success_threshold: expected a number > 0")
    else:
        betas = _check_ratio_list(raw, "beta_list", errors)
        eta = raw.get("eta")
        if not _is_number(eta) or not 0.0 <= float(eta) <= 1.0:
            errors.append("eta: expected a number in [0, 1]")
            etas = []
        else:
            etas = [float(eta)]
        for key in ("sigma_ratio",):
            if key in raw and (not _is_number(raw[key]) or raw[key] <= 0):
                errors.append(f"{key}: expected a number > 0")
        if "sigma_eps" in raw and (not _is_number(raw["sigma_eps"]) or raw["sigma_eps"] < 0):
            errors.append("sigma_eps: expected a number >= 0")
        if "normalize_tail_norm" in raw and not isinstance(raw["normalize_tail_norm"], bool):
            errors.append("normalize_tail_norm: expected true or false")
        if kind == "magnitude_sweep":
            ratios = raw.get("ratios")
            if not isinstance(ratios, list) or not ratios:
                errors.append("ratios: expected a non-empty list of numbers")
            else:
                for idx, item in enumerate(ratios):
                    if not _is_number(item) or item <= 0:
                        errors.append(f"ratios[{idx}]: expected a number > 0, got {item!r}")
            if len(betas) != 1:
                errors.append("beta_list: magnitude sweeps take exactly one beta")

    if n is not None:
        for eta in etas:
            l = round_half_up(eta * n)
            if kind != "pt_sweep" and l >= n:
                errors.append(f"eta={eta:g}: RMSE experiments need l < n, got l={l} at n={n}")
            for beta in betas:
                k = round_half_up(beta * n)
                if k > l:
                    errors.append(
                        f"cell beta={beta:g}, eta={eta:g}: rounding gives k={k} > l={l} at n={n}"
                    )
    if errors:
        raise ConfigError(errors)
    return raw
