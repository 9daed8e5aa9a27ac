"""Result payloads, CSV schemas and the run manifest for BlockMC Lab."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
import hashlib
import json
from typing import Any, Dict, List, Mapping, Optional, Tuple

from harness import SpectrumCheck, SweepCell, SweepResult
from version import __version__

# Bump when a column is added, removed, renamed or reordered.
CSV_SCHEMA_VERSION = 2

RMSE_TABLE_COLUMNS: Tuple[str, ...] = (
    "run_id",
    "cell_index",
    "beta",
    "eta",
    "n",
    "k",
    "l",
    "trials",
    "mean_scaled_rmse",
    "std_error",
    "theory_xi",
    "mean_scaled_oracle",
    "converged_trials",
)
MAGNITUDE_SWEEP_COLUMNS: Tuple[str, ...] = RMSE_TABLE_COLUMNS[:2] + ("ratio",) + RMSE_TABLE_COLUMNS[2:]
PT_SWEEP_COLUMNS: Tuple[str, ...] = (
    "run_id",
    "cell_index",
    "beta",
    "eta",
    "n",
    "k",
    "l",
    "trials",
    "success_rate",
    "certificate_rate",
    "mean_relative_error",
    "std_error",
    "success_threshold",
    "converged_trials",
)
SPECTRUM_CHECK_COLUMNS: Tuple[str, ...] = (
    "run_id",
    "bin_index",
    "bin_left",
    "bin_right",
    "empirical_mass",
    "theory_mass",
)
TRIAL_COLUMNS: Tuple[str, ...] = (
    "run_id",
    "cell_index",
    "trial_index",
    "seed",
    "value",
    "relative_error",
    "converged",
    "iterations",
    "scaled_oracle",
    "certificate_holds",
)
PT_CURVE_COLUMNS: Tuple[str, ...] = ("run_id", "eta", "beta_wc")
DENSITY_COLUMNS: Tuple[str, ...] = ("run_id", "x", "density")
SINGULAR_VALUE_COLUMNS: Tuple[str, ...] = ("run_id", "index", "singular_value")

RESULT_COLUMNS: Dict[str, Tuple[str, ...]] = {
    "rmse_table": RMSE_TABLE_COLUMNS,
    "magnitude_sweep": MAGNITUDE_SWEEP_COLUMNS,
    "pt_sweep": PT_SWEEP_COLUMNS,
    "spectrum_check": SPECTRUM_CHECK_COLUMNS,
}


def canonical_json(payload: Any) -> str:
    """Serialize with sorted keys and fixed separators."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def compute_run_id(config: Mapping[str, Any], version: str = __version__) -> str:
    """Return a short digest of the resolved config and tool version."""
    digest = hashlib.sha256(canonical_json({"config": config, "version": version}).encode("utf-8"))
    return digest.hexdigest()[:16]


def _mean_or_none(values: List[Optional[float]]) -> Optional[float]:
    if not values or any(value is None for value in values):
        return None
    return sum(values) / len(values)


@dataclass(frozen=True)
class CellPayloadBase:
    """Fields shared by every per-cell result row."""

    run_id: str
    cell_index: int
    beta: float
    eta: float
    n: int
    k: int
    l: int
    trials: int
    converged_trials: int

    def validate(self) -> None:
        """Validate the shared fields."""
        if not self.run_id:
            raise ValueError("run_id is required")
        if self.trials < 1:
            raise ValueError("a cell needs at least one trial")
        if not 0 <= self.converged_trials <= self.trials:
            raise ValueError("converged_trials out of range")
        if not 0 <= self.k <= self.l <= self.n:
            raise ValueError(f"inconsistent shape n={self.n}, k={self.k}, l={self.l}")

    def to_dict(self) -> Dict[str, Any]:
        """Return the shared fields as a dict."""
        self.validate()
        return {
            "run_id": self.run_id,
            "cell_index": self.cell_index,
            "beta": self.beta,
            "eta": self.eta,
            "n": self.n,
            "k": self.k,
            "l": self.l,
            "trials": self.trials,
            "converged_trials": self.converged_trials,
        }


@dataclass(frozen=True)
class RmseCellPayload(CellPayloadBase):
    """Row of an RMSE table or a magnitude sweep."""

    mean_scaled_rmse: float
    std_error: float
    theory_xi: Optional[float]
    mean_scaled_oracle: Optional[float]
    ratio: Optional[float] = None

    @classmethod
    def from_cell(cls, cell: SweepCell, run_id: str) -> "RmseCellPayload":
        """Create a row from an aggregated cell."""
        return cls(
            run_id=run_id,
            cell_index=cell.cell_index,
            beta=cell.beta,
            eta=cell.eta,
            n=cell.n,
            k=cell.k,
            l=cell.l,
            trials=len(cell.trials),
            converged_trials=cell.converged_count,
            mean_scaled_rmse=cell.mean,
            std_error=cell.std_error,
            theory_xi=cell.theory_xi,
            mean_scaled_oracle=_mean_or_none([trial.scaled_oracle for trial in cell.trials]),
            ratio=cell.ratio,
        )

    def validate(self) -> None:
        super().validate()
        if self.mean_scaled_rmse < 0 or self.std_error < 0:
            raise ValueError("RMSE statistics must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload.update(
            {
                "mean_scaled_rmse": self.mean_scaled_rmse,
                "std_error": self.std_error,
                "theory_xi": self.theory_xi,
                "mean_scaled_oracle": self.mean_scaled_oracle,
            }
        )
        if self.ratio is not None:
            payload["ratio"] = self.ratio
        return payload


@dataclass(frozen=True)
class PtCellPayload(CellPayloadBase):
    """Row of a phase transition sweep."""

    success_rate: float
    certificate_rate: Optional[float]
    mean_relative_error: float
    std_error: float
    success_threshold: float

    @classmethod
    def from_cell(cls, cell: SweepCell, run_id: str) -> "PtCellPayload":
        """Create a row from an aggregated cell."""
        return cls(
            run_id=run_id,
            cell_index=cell.cell_index,
            beta=cell.beta,
            eta=cell.eta,
            n=cell.n,
            k=cell.k,
            l=cell.l,
            trials=len(cell.trials),
            converged_trials=cell.converged_count,
            success_rate=cell.success_rate,
            certificate_rate=cell.certificate_rate,
            mean_relative_error=cell.mean,
            std_error=cell.std_error,
            success_threshold=cell.success_threshold,
        )

    def validate(self) -> None:
        super().validate()
        if self.success_rate is None or not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success_rate must lie in [0, 1]")
        if self.certificate_rate is not None and not 0.0 <= self.certificate_rate <= 1.0:
            raise ValueError("certificate_rate must lie in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload.update(
            {
                "success_rate": self.success_rate,
                "certificate_rate": self.certificate_rate,
                "mean_relative_error": self.mean_relative_error,
                "std_error": self.std_error,
                "success_threshold": self.success_threshold,
            }
        )
        return payload


def cell_payloads(result: SweepResult, run_id: str) -> List[CellPayloadBase]:
    """Return one row payload per cell of a sweep."""
    if result.kind == "pt_sweep":
        return [PtCellPayload.from_cell(cell, run_id) for cell in result.cells]
    return [RmseCellPayload.from_cell(cell, run_id) for cell in result.cells]


def trial_rows(result: SweepResult, run_id: str) -> List[Dict[str, Any]]:
    """Flatten every trial of a sweep, in (cell, trial) order."""
    rows = []
    for cell in result.cells:
        for trial in cell.trials:
            row = {"run_id": run_id}
            row.update(trial.to_dict())
            rows.append(row)
    return rows


def sweep_payload(result: SweepResult, run_id: str) -> Dict[str, Any]:
    """JSON document for a sweep: cell summaries plus every per-trial value."""
    result.validate()
    return {
        "run_id": run_id,
        "kind": result.kind,
        "schema_version": CSV_SCHEMA_VERSION,
        "cells": [payload.to_dict() for payload in cell_payloads(result, run_id)],
        "trials": trial_rows(result, run_id),
    }


def spectrum_rows(check: SpectrumCheck, run_id: str) -> List[Dict[str, Any]]:
    """One row per histogram bin."""
    check.validate()
    return [
        {
            "run_id": run_id,
            "bin_index": idx,
            "bin_left": check.bin_edges[idx],
            "bin_right": check.bin_edges[idx + 1],
            "empirical_mass": empirical,
            "theory_mass": theory,
        }
        for idx, (empirical, theory) in enumerate(zip(check.empirical_masses, check.theory_masses))
    ]


def spectrum_payload(check: SpectrumCheck, run_id: str) -> Dict[str, Any]:
    payload = {"run_id": run_id, "kind": "spectrum_check", "schema_version": CSV_SCHEMA_VERSION}
    payload.update(check.to_dict())
    return payload


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to rerun a command and locate its outputs."""

    command: str
    config: Dict[str, Any]
    version: str
    master_seed: Optional[int]
    timestamp: str
    outputs: Tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def create(
        cls,
        command: str,
        config: Mapping[str, Any],
        outputs: Tuple[str, ...] = (),
    ) -> "RunManifest":
        seed = config.get("master_seed", config.get("seed"))
        return cls(
            command=command,
            config=dict(config),
            version=__version__,
            master_seed=seed,
            timestamp=datetime.now().isoformat(timespec="seconds"),
            outputs=tuple(outputs),
        )

    @property
    def run_id(self) -> str:
        return compute_run_id(self.config, self.version)

    def validate(self) -> None:
        if not self.command:
            raise ValueError("command is required")
        if "kind" not in self.config:
            raise ValueError("manifest config needs a kind")
        if not self.version:
            raise ValueError("version is required")

    def to_dict(self) -> Dict[str, Any]:
        self.validate()
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "version": self.version,
            "master_seed": self.master_seed,
            "timestamp": self.timestamp,
            "outputs": list(self.outputs),
        }
