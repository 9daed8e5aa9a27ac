"""
Seeded Monte-Carlo experiments.

Every trial owns a seed derived up front from (master_seed, cell, trial), so
results are identical whatever the worker count. Trials fan out over a thread
pool; the heavy lifting is LAPACK, which releases the GIL.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import HARNESS_SETTINGS, THEORY_SETTINGS, resolve_threads
from equivalence import DegenerateInstanceError, certificate
from freeprob import SpectralLaw, bulk_cdf, empirical_product_spectrum
from model import (
    DominantProfile,
    FactorMode,
    ProblemShape,
    ShapeError,
    SpectrumSpec,
    TailProfile,
    apply_mask,
    build_ground_truth,
    build_mask,
    relative_error,
    sample_haar_basis,
    shape_from_ratios,
)
from rmse import NotRecoverableError, RmseReport, residual_oracle, theoretical_xi
from solver import SolverConfig, complete

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def seed_trial(master_seed: int, cell_index: int, trial_index: int) -> int:
    """Derive a 64-bit trial seed with the SplitMix64 finalizer.

    The state is master + gamma * ((cell << 32) | trial) mod 2^64. Gamma is odd
    and the finalizer is a bijection, so distinct (cell, trial) pairs map to
    distinct seeds for a fixed master.
    """
    if master_seed < 0 or cell_index < 0 or not 0 <= trial_index < (1 << 32):
        raise ValueError("seed indices must be non-negative and trial_index < 2^32")
    z = (master_seed + _GOLDEN_GAMMA * ((cell_index << 32) | trial_index)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings shared by the Monte-Carlo experiments."""

    n: int = HARNESS_SETTINGS.n
    eta: float = HARNESS_SETTINGS.eta
    beta_list: Tuple[float, ...] = HARNESS_SETTINGS.beta_list
    trials: int = HARNESS_SETTINGS.trials
    mode: FactorMode = FactorMode.WORST_CASE_SYMMETRIC
    tail_profile: TailProfile = TailProfile.FLAT
    sigma_ratio: float = HARNESS_SETTINGS.sigma_ratio
    sigma_eps: float = HARNESS_SETTINGS.sigma_eps
    normalize_tail_norm: bool = True
    dominant_profile: DominantProfile = DominantProfile.CONSTANT
    master_seed: int = 0
    threads: Optional[int] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", FactorMode(self.mode))
        object.__setattr__(self, "tail_profile", TailProfile(self.tail_profile))
        object.__setattr__(self, "dominant_profile", DominantProfile(self.dominant_profile))
        object.__setattr__(self, "beta_list", tuple(float(b) for b in self.beta_list))

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from a validated config tree; missing keys take the defaults."""
        defaults = cls()
        beta_list = raw.get("beta_list", raw.get("beta_grid", defaults.beta_list))
        return cls(
            n=raw.get("n", defaults.n),
            eta=raw.get("eta", defaults.eta),
            beta_list=tuple(beta_list),
            trials=raw.get("trials", defaults.trials),
            mode=raw.get("mode", defaults.mode),
            tail_profile=raw.get("tail_profile", defaults.tail_profile),
            sigma_ratio=raw.get("sigma_ratio", defaults.sigma_ratio),
            sigma_eps=raw.get("sigma_eps", defaults.sigma_eps),
            normalize_tail_norm=raw.get("normalize_tail_norm", defaults.normalize_tail_norm),
            dominant_profile=raw.get("dominant_profile", defaults.dominant_profile),
            master_seed=raw.get("master_seed", defaults.master_seed),
            threads=raw.get("threads"),
            solver=SolverConfig.from_dict(raw.get("solver")),
        )

    def spectrum_spec(self, ratio: Optional[float] = None) -> SpectrumSpec:
        ratio = self.sigma_ratio if ratio is None else ratio
        sigma_mag = ratio * self.sigma_eps if self.sigma_eps > 0 else ratio
        return SpectrumSpec(
            sigma_mag=sigma_mag,
            sigma_eps=self.sigma_eps,
            tail_profile=self.tail_profile,
            normalize_tail_norm=self.normalize_tail_norm,
            dominant_profile=self.dominant_profile,
        )

    def validate(self) -> None:
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        self.solver.validate()


@dataclass(frozen=True)
class TrialOutcome:
    """Per-trial measurement; the value aggregated by its cell is ``value``."""

    cell_index: int
    trial_index: int
    seed: int
    value: float
    relative_error: float
    converged: bool
    iterations: int
    scaled_oracle: Optional[float] = None
    certificate_holds: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cell_index": self.cell_index,
            "trial_index": self.trial_index,
            "seed": self.seed,
            "value": self.value,
            "relative_error": self.relative_error,
            "converged": self.converged,
            "iterations": self.iterations,
            "scaled_oracle": self.scaled_oracle,
            "certificate_holds": self.certificate_holds,
        }


def _mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    data = np.asarray(values, dtype=float)
    mean = float(np.mean(data))
    if data.size < 2:
        return mean, 0.0
    return mean, float(np.std(data, ddof=1) / math.sqrt(data.size))


@dataclass(frozen=True)
class SweepCell:
    """Aggregate over the trials of one (beta, eta[, ratio]) cell."""

    cell_index: int
    beta: float
    eta: float
    n: int
    k: int
    l: int
    trials: Tuple[TrialOutcome, ...]
    theory_xi: Optional[float] = None
    ratio: Optional[float] = None
    success_threshold: Optional[float] = None

    @property
    def values(self) -> Tuple[float, ...]:
        return tuple(trial.value for trial in self.trials)

    @property
    def mean(self) -> float:
        return _mean_and_stderr(self.values)[0]

    @property
    def std_error(self) -> float:
        return _mean_and_stderr(self.values)[1]

    @property
    def seeds(self) -> Tuple[int, ...]:
        return tuple(trial.seed for trial in self.trials)

    @property
    def converged_count(self) -> int:
        return sum(1 for trial in self.trials if trial.converged)

    @property
    def success_rate(self) -> Optional[float]:
        if self.success_threshold is None:
            return None
        hits = sum(1 for trial in self.trials if trial.relative_error < self.success_threshold)
        return hits / len(self.trials)

    @property
    def certificate_rate(self) -> Optional[float]:
        flags = [trial.certificate_holds for trial in self.trials]
        if any(flag is None for flag in flags):
            return None
        return sum(1 for flag in flags if flag) / len(flags)

    def validate(self) -> None:
        if not self.trials:
            raise ValueError(f"cell {self.cell_index} has no trials")
        if any(trial.cell_index != self.cell_index for trial in self.trials):
            raise ValueError(f"cell {self.cell_index} holds trials of another cell")


@dataclass(frozen=True)
class SweepResult:
    """Cells of one experiment in deterministic (cell, trial) order."""

    kind: str
    cells: Tuple[SweepCell, ...]

    def validate(self) -> None:
        for idx, cell in enumerate(self.cells):
            if cell.cell_index != idx:
                raise ValueError(f"cells out of order at position {idx}")
            cell.validate()


@dataclass(frozen=True)
class SpectrumCheck:
    """Empirical projector-product spectrum against the limiting law."""

    n: int
    k: int
    l: int
    seed: int
    law: SpectralLaw
    zero_fraction: float
    one_fraction: float
    one_count: int
    expected_one_count: int
    bin_edges: Tuple[float, ...]
    empirical_masses: Tuple[float, ...]
    theory_masses: Tuple[float, ...]
    bulk_l1: float
    outside_edge_count: int
    edge_allowance: float

    def validate(self) -> None:
        if len(self.bin_edges) != len(self.empirical_masses) + 1:
            raise ValueError("bin edges and masses disagree in length")
        if len(self.empirical_masses) != len(self.theory_masses):
            raise ValueError("empirical and theory histograms disagree in length")
        if self.bulk_l1 < 0:
            raise ValueError("L1 distance must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        self.validate()
        return {
            "n": self.n,
            "k": self.k,
            "l": self.l,
            "seed": self.seed,
            "law": self.law.to_dict(),
            "zero_fraction": self.zero_fraction,
            "one_fraction": self.one_fraction,
            "one_count": self.one_count,
            "expected_one_count": self.expected_one_count,
            "bin_edges": list(self.bin_edges),
            "empirical_masses": list(self.empirical_masses),
            "theory_masses": list(self.theory_masses),
            "bulk_l1": self.bulk_l1,
            "outside_edge_count": self.outside_edge_count,
            "edge_allowance": self.edge_allowance,
        }


# ---------------------------------------------------------------------------
# Trial bodies
# ---------------------------------------------------------------------------

_Task = Tuple[int, int, int, Callable[[int], Dict[str, Any]]]


def _oracle_applies(config: ExperimentConfig) -> bool:
    return config.mode == FactorMode.WORST_CASE_SYMMETRIC and config.tail_profile == TailProfile.FLAT


def _rmse_trial(
    config: ExperimentConfig,
    shape: ProblemShape,
    spec: SpectrumSpec,
    seed: int,
) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    truth = build_ground_truth(shape, spec, config.mode, rng)
    observation = apply_mask(build_mask(shape.n, shape.l, shape.l), truth.X_sol)
    completion = complete(observation, config.solver)
    raw = float(np.linalg.norm(completion.X_hat - truth.X_sol))
    oracle = None
    if _oracle_applies(config):
        try:
            oracle = residual_oracle(truth.Vperp, shape.l, config.sigma_eps)
        except NotRecoverableError as exc:
            logger.debug("No oracle for seed %s: %s", seed, exc)
    report = RmseReport.from_residual(raw, shape.n, shape.k, shape.l, oracle_residual=oracle)
    return {
        "value": report.scaled,
        "relative_error": relative_error(completion.X_hat, truth.X_sol),
        "converged": completion.converged,
        "iterations": completion.iterations_used,
        "scaled_oracle": report.scaled_oracle,
    }


def _pt_trial(
    config: ExperimentConfig,
    shape: ProblemShape,
    seed: int,
) -> Dict[str, Any]:
    rng = np.random.default_rng(seed)
    spec = SpectrumSpec(
        sigma_mag=1.0,
        sigma_eps=0.0,
        dominant_profile=config.dominant_profile,
    )
    truth = build_ground_truth(shape, spec, config.mode, rng)
    observation = apply_mask(build_mask(shape.n, shape.l, shape.l), truth.X_sol)
    completion = complete(observation, config.solver)
    error = relative_error(completion.X_hat, truth.X_sol)
    try:
        holds = certificate(truth.Vbar, truth.Vperp, truth.Ubar, truth.Uperp, shape.l).exact_condition_holds
    except DegenerateInstanceError as exc:
        logger.debug("Certificate unavailable for seed %s: %s", seed, exc)
        holds = False
    return {
        "value": error,
        "relative_error": error,
        "converged": completion.converged,
        "iterations": completion.iterations_used,
        "certificate_holds": holds,
    }


def _run_tasks(tasks: List[_Task], threads: Optional[int]) -> List[TrialOutcome]:
    workers = resolve_threads(threads)

    def execute(task: _Task) -> TrialOutcome:
        cell_index, trial_index, seed, body = task
        return TrialOutcome(cell_index=cell_index, trial_index=trial_index, seed=seed, **body(seed))

    if workers == 1:
        return [execute(task) for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map keeps submission order
        return list(pool.map(execute, tasks))


def _group(outcomes: List[TrialOutcome], cell_count: int) -> List[Tuple[TrialOutcome, ...]]:
    grouped: List[List[TrialOutcome]] = [[] for _ in range(cell_count)]
    for outcome in outcomes:
        grouped[outcome.cell_index].append(outcome)
    return [tuple(group) for group in grouped]


def _attach_xi(beta: float, eta: float, sigma_eps: float) -> Optional[float]:
    try:
        return theoretical_xi(beta, eta, sigma_eps)
    except NotRecoverableError:
        return None


def _log_cell(cell: SweepCell) -> None:
    non_converged = len(cell.trials) - cell.converged_count
    if non_converged:
        logger.warning(
            "Cell %s: %s of %s trials hit max_iters",
            cell.cell_index,
            non_converged,
            len(cell.trials),
        )
    logger.info(
        "Cell %s (beta=%g, eta=%g%s): mean=%.4f, stderr=%.4f, xi=%s, trials=%s",
        cell.cell_index,
        cell.beta,
        cell.eta,
        "" if cell.ratio is None else f", ratio={cell.ratio:g}",
        cell.mean,
        cell.std_error,
        "n/a" if cell.theory_xi is None else f"{cell.theory_xi:.4f}",
        len(cell.trials),
    )


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def run_rmse_table(config: ExperimentConfig) -> SweepResult:
    """Scaled RMSE per beta at fixed eta, with the theoretical xi attached."""
    config.validate()
    shapes = [shape_from_ratios(config.n, beta, config.eta) for beta in config.beta_list]
    spec = config.spectrum_spec()
    spec.validate()
    tasks: List[_Task] = []
    for cell_index, shape in enumerate(shapes):
        if shape.l >= shape.n:
            raise ShapeError("RMSE experiments need a non-empty missing block (l < n)")
        for trial_index in range(config.trials):
            seed = seed_trial(config.master_seed, cell_index, trial_index)
            tasks.append(
                (cell_index, trial_index, seed, lambda s, shape=shape: _rmse_trial(config, shape, spec, s))
            )
    grouped = _group(_run_tasks(tasks, config.threads), len(shapes))
    cells = []
    for cell_index, (beta, shape) in enumerate(zip(config.beta_list, shapes)):
        cell = SweepCell(
            cell_index=cell_index,
            beta=beta,
            eta=config.eta,
            n=shape.n,
            k=shape.k,
            l=shape.l,
            trials=grouped[cell_index],
            theory_xi=_attach_xi(beta, config.eta, config.sigma_eps),
        )
        _log_cell(cell)
        cells.append(cell)
    result = SweepResult(kind="rmse_table", cells=tuple(cells))
    result.validate()
    return result


def run_magnitude_sweep(config: ExperimentConfig, ratios: Sequence[float]) -> SweepResult:
    """Scaled RMSE at one beta for each dominant-to-tail magnitude ratio."""
    config.validate()
    if len(config.beta_list) != 1:
        raise ValueError("magnitude sweeps take exactly one beta")
    if not ratios:
        raise ValueError("ratios must not be empty")
    beta = config.beta_list[0]
    shape = shape_from_ratios(config.n, beta, config.eta)
    if shape.l >= shape.n:
        raise ShapeError("RMSE experiments need a non-empty missing block (l < n)")
    xi = _attach_xi(beta, config.eta, config.sigma_eps)
    tasks: List[_Task] = []
    for cell_index, ratio in enumerate(ratios):
        if not ratio > 0:
            raise ValueError(f"ratios must be > 0, got {ratio}")
        spec = config.spectrum_spec(float(ratio))
        spec.validate()
        for trial_index in range(config.trials):
            seed = seed_trial(config.master_seed, cell_index, trial_index)
            tasks.append(
                (cell_index, trial_index, seed, lambda s, spec=spec: _rmse_trial(config, shape, spec, s))
            )
    grouped = _group(_run_tasks(tasks, config.threads), len(ratios))
    cells = []
    for cell_index, ratio in enumerate(ratios):
        cell = SweepCell(
            cell_index=cell_index,
            beta=beta,
            eta=config.eta,
            n=shape.n,
            k=shape.k,
            l=shape.l,
            trials=grouped[cell_index],
            theory_xi=xi,
            ratio=float(ratio),
        )
        _log_cell(cell)
        cells.append(cell)
    result = SweepResult(kind="magnitude_sweep", cells=tuple(cells))
    result.validate()
    return result


def run_pt_sweep(
    config: ExperimentConfig,
    beta_grid: Sequence[float],
    eta_grid: Sequence[float],
    success_threshold: float = HARNESS_SETTINGS.success_threshold,
) -> SweepResult:
    """Empirical exact-recovery rate over a (beta, eta) grid of ideal low rank instances."""
    config.validate()
    if not success_threshold > 0:
        raise ValueError(f"success_threshold must be > 0, got {success_threshold}")
    grid = [(float(beta), float(eta)) for eta in eta_grid for beta in beta_grid]
    if not grid:
        raise ValueError("beta_grid and eta_grid must not be empty")
    shapes = [shape_from_ratios(config.n, beta, eta) for beta, eta in grid]
    tasks: List[_Task] = []
    for cell_index, shape in enumerate(shapes):
        for trial_index in range(config.trials):
            seed = seed_trial(config.master_seed, cell_index, trial_index)
            tasks.append(
                (cell_index, trial_index, seed, lambda s, shape=shape: _pt_trial(config, shape, s))
            )
    grouped = _group(_run_tasks(tasks, config.threads), len(shapes))
    cells = []
    for cell_index, ((beta, eta), shape) in enumerate(zip(grid, shapes)):
        cell = SweepCell(
            cell_index=cell_index,
            beta=beta,
            eta=eta,
            n=shape.n,
            k=shape.k,
            l=shape.l,
            trials=grouped[cell_index],
            success_threshold=success_threshold,
        )
        logger.info(
            "Cell %s (beta=%g, eta=%g): success=%.2f, certificate=%.2f, trials=%s",
            cell_index,
            beta,
            eta,
            cell.success_rate,
            cell.certificate_rate,
            len(cell.trials),
        )
        cells.append(cell)
    result = SweepResult(kind="pt_sweep", cells=tuple(cells))
    result.validate()
    return result


def run_spectrum_check(
    n: int,
    beta: float,
    eta: float,
    bins: int = HARNESS_SETTINGS.spectrum_bins,
    seed: int = 0,
) -> SpectrumCheck:
    """Compare one sampled projector-product spectrum with the limiting law.

    Bin masses are eigenvalue counts divided by n, so the histogram carries
    the bulk mass 1 - f0 - f1 rather than unit mass.
    """
    if n < HARNESS_SETTINGS.min_spectrum_n:
        raise ShapeError(f"spectrum checks need n >= {HARNESS_SETTINGS.min_spectrum_n}, got {n}")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    shape = shape_from_ratios(n, beta, eta)
    law = SpectralLaw.from_ratios(shape.beta, shape.eta)
    rng = np.random.default_rng(seed)
    Vperp = sample_haar_basis(n, n - shape.k, rng) if shape.k < n else np.zeros((n, 0))
    Uperp_d = sample_haar_basis(n, n - shape.l, rng) if shape.l < n else np.zeros((n, 0))
    eigenvalues = empirical_product_spectrum(Vperp, Uperp_d)

    tol = THEORY_SETTINGS.eigen_zero_tol
    zeros = eigenvalues < tol
    ones = eigenvalues > 1.0 - tol
    bulk = eigenvalues[~zeros & ~ones]

    edges = np.linspace(law.x_l, law.x_u, bins + 1)
    if law.x_u > law.x_l:
        counts, _ = np.histogram(np.clip(bulk, law.x_l, law.x_u), bins=edges)
        cdf = np.array([bulk_cdf(float(x), law.beta, law.eta) for x in edges])
        theory = np.diff(cdf)
    else:
        counts = np.zeros(bins)
        counts[0] = bulk.size
        theory = np.zeros(bins)
    empirical = counts / n
    allowance = 5.0 * n ** (-2.0 / 3.0)
    outside = int(np.sum((bulk < law.x_l - allowance) | (bulk > law.x_u + allowance)))

    check = SpectrumCheck(
        n=n,
        k=shape.k,
        l=shape.l,
        seed=seed,
        law=law,
        zero_fraction=float(np.mean(zeros)),
        one_fraction=float(np.mean(ones)),
        one_count=int(np.sum(ones)),
        expected_one_count=max(n - shape.k - shape.l, 0),
        bin_edges=tuple(float(x) for x in edges),
        empirical_masses=tuple(float(x) for x in empirical),
        theory_masses=tuple(float(x) for x in theory),
        bulk_l1=float(np.sum(np.abs(empirical - theory))),
        outside_edge_count=outside,
        edge_allowance=allowance,
    )
    logger.info(
        "Spectrum n=%s beta=%g eta=%g: zero=%.4f (f0=%.4f), one=%s/%s, bulk L1=%.4f",
        n,
        beta,
        eta,
        check.zero_fraction,
        law.f0,
        check.one_count,
        check.expected_one_count,
        check.bulk_l1,
    )
    return check
