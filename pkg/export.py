"""
File IO for BlockMC Lab: result CSV/JSON writers, the headerless matrix CSV
reader used by ``inspect``, and experiment config loading.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence

import numpy as np

from config import ConfigError, validate_config

logger = logging.getLogger(__name__)


class ExportError(RuntimeError):
    """An output file or directory could not be written."""


class MatrixFormatError(ValueError):
    """A matrix CSV is ragged, empty or holds non-numeric cells."""


def ensure_out_dir(path: Path) -> Path:
    """Create the output directory if needed and return it."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create output directory {path}: {exc}") from exc
    if not path.is_dir():
        raise ExportError(f"output path {path} is not a directory")
    return path


def _format_cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Mapping[str, Any]],
    preamble: Sequence[str] = (),
) -> Path:
    """Write rows with a fixed column order; missing values become empty cells.

    Preamble lines are written first as ``# `` comments.
    """
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            for line in preamble:
                handle.write(f"# {line}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format_cell(row.get(column)) for column in columns])
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    logger.debug("Wrote %s", path)
    return path


def write_json(path: Path, payload: Any) -> Path:
    """Write a JSON document with stable indentation."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    logger.debug("Wrote %s", path)
    return path


def read_matrix_csv(path: Path) -> np.ndarray:
    """Read a comma-separated numeric matrix without header.

    Every row must have the same number of cells; blank lines are skipped.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open("r", newline="", encoding="utf-8") as handle:
        for line_no, cells in enumerate(csv.reader(handle), start=1):
            if not cells or all(not cell.strip() for cell in cells):
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise MatrixFormatError(
                    f"{path}:{line_no}: ragged row with {len(cells)} cells, expected {width}"
                )
            try:
                rows.append([float(cell) for cell in cells])
            except ValueError:
                bad = next(cell for cell in cells if not _is_float(cell))
                raise MatrixFormatError(f"{path}:{line_no}: non-numeric cell {bad!r}") from None
    if not rows:
        raise MatrixFormatError(f"{path}: no data rows")
    matrix = np.array(rows, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise MatrixFormatError(f"{path}: matrix holds non-finite values")
    return matrix


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def file_sha256(path: Path) -> str:
    """Return the hex SHA-256 of a file's bytes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path: Path) -> Dict[str, Any]:
    """Load and validate an experiment config; a run manifest is accepted too."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from exc
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    if isinstance(raw, dict) and "command" in raw and isinstance(raw.get("config"), dict):
        if raw["command"] != "run":
            raise ConfigError(
                [f"{path}: manifest of a {raw['command']!r} command, only 'run' manifests can be rerun"]
            )
        logger.info("Rerunning from manifest %s (run %s)", path, raw.get("run_id"))
        raw = raw["config"]
    return validate_config(raw)
