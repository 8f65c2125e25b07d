"""
Result Storage
CSV and JSON readers/writers for matrices, balance sheets, reports, sweep tables
and logistic fits.
"""

from __future__ import annotations

import csv
import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .contagion import CascadeOutcome
from .core import AdjacencyMatrix, BalanceSheet, ExposureMatrix, ReconstructionReport
from .errors import ConfigError, InterbankError
from .netgen import GroundTruth, RngStream
from .sweeps import ContagionMethod, ContagionRecord, FitRecord, SweepRecord
from .utils import ensure_directory, load_json, save_json

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MATRIX_FORMAT = "%.17g"
BALANCE_FIELDS = ["bank", "assets", "liabilities"]
STRESS_FIELDS = ["theta", "kappa", "method", "xi_mean", "xi_min", "xi_max"]
SWEEP_FIELDS = [
    "n",
    "kappa",
    "mean_epsilon",
    "mean_sx",
    "sq",
    "predicted_epsilon",
    "feasible",
    "kappa_star",
    "trials",
    "nonconverged",
    "diverged",
    "failures",
]
OUTCOME_FIELDS = ["origin", "rounds", "failed", "fraction"]
_STRESS_NAME = re.compile(r"stress_n(\d+)\.csv$")


def _load_matrix(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: not a numeric CSV matrix ({exc})") from exc
    return values


def save_matrix(path: PathLike, entries: np.ndarray) -> Path:
    """Comma-separated matrix without header, full float precision."""
    path = Path(path)
    ensure_directory(path.parent)
    fmt = "%d" if np.issubdtype(entries.dtype, np.integer) else MATRIX_FORMAT
    np.savetxt(path, entries, fmt=fmt, delimiter=",")
    return path


def load_exposures(path: PathLike) -> ExposureMatrix:
    try:
        return ExposureMatrix(_load_matrix(path))
    except InterbankError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_adjacency(path: PathLike) -> AdjacencyMatrix:
    try:
        return AdjacencyMatrix(_load_matrix(path))
    except InterbankError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_balance_sheet(path: PathLike, bs: BalanceSheet) -> Path:
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=BALANCE_FIELDS)
        writer.writeheader()
        for i, (a, l) in enumerate(zip(bs.assets, bs.liabilities)):
            writer.writerow(
                {"bank": i, "assets": repr(float(a)), "liabilities": repr(float(l))}
            )
    return path


def load_balance_sheet(path: PathLike) -> BalanceSheet:
    """Read a ``bank,assets,liabilities`` CSV; rows may come in any bank order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(BALANCE_FIELDS) - set(reader.fieldnames):
            raise ConfigError(f"{path}: header must be {','.join(BALANCE_FIELDS)}")
        try:
            rows = sorted(
                (int(r["bank"]), float(r["assets"]), float(r["liabilities"]))
                for r in reader
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ConfigError(f"{path}: bank ids must be 0..N-1")
    try:
        return BalanceSheet.from_vectors([r[1] for r in rows], [r[2] for r in rows])
    except InterbankError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_report(
    path: PathLike, report: ReconstructionReport, solution_path: Optional[PathLike]
) -> Path:
    path = Path(path)
    solution = str(solution_path) if solution_path is not None else None
    save_json(report.to_json_dict(solution), path)
    return path


def save_ground_truth(
    directory: PathLike, truth: GroundTruth, kappa: float, stream: RngStream
) -> List[Path]:
    """Write exposures, adjacency, balance sheet and the generation manifest."""
    directory = ensure_directory(directory)
    files = [
        save_matrix(directory / "exposures.csv", truth.exposures.entries),
        save_matrix(directory / "adjacency.csv", truth.adjacency.entries),
        save_balance_sheet(directory / "balance.csv", truth.balance),
    ]
    manifest = directory / "truth.json"
    save_json(
        {
            "n": truth.exposures.n,
            "kappa": kappa,
            "lambda": truth.balance.total,
            "seed": stream.seed,
            "stream_id": stream.stream_id,
        },
        manifest,
    )
    files.append(manifest)
    return files


def _csv_value(value: Any) -> Any:
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, ContagionMethod):
        return value.value
    return value


def _write_rows(
    path: Path, fields: Sequence[str], rows: Iterable[Dict[str, Any]]
) -> Path:
    ensure_directory(path.parent)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(v) for k, v in row.items()})
    return path


def save_sweep_csv(path: PathLike, records: Iterable[SweepRecord]) -> Path:
    return _write_rows(Path(path), SWEEP_FIELDS, (r.as_row() for r in records))


def load_sweep_csv(path: PathLike) -> List[SweepRecord]:
    records = []
    for row in _read_rows(Path(path), SWEEP_FIELDS):
        records.append(
            SweepRecord(
                n=int(row["n"]),
                kappa=float(row["kappa"]),
                mean_epsilon=float(row["mean_epsilon"]),
                mean_sx=float(row["mean_sx"]),
                sq=float(row["sq"]),
                predicted_epsilon=float(row["predicted_epsilon"]),
                feasible=row["feasible"] == "True",
                kappa_star=float(row["kappa_star"]),
                trials=int(row["trials"]),
                nonconverged=int(row["nonconverged"]),
                diverged=int(row["diverged"]),
                failures=int(row["failures"]),
            )
        )
    return records


def stress_path(directory: PathLike, n: int) -> Path:
    return Path(directory) / f"stress_n{n}.csv"


def save_stress_csv(
    directory: PathLike, records: Iterable[ContagionRecord]
) -> List[Path]:
    """One ``theta,kappa,method,xi_mean,xi_min,xi_max`` table per N."""
    by_n: Dict[int, List[ContagionRecord]] = {}
    for record in records:
        by_n.setdefault(record.n, []).append(record)
    paths = []
    for n in sorted(by_n):
        rows = (
            {field: getattr(r, field) for field in STRESS_FIELDS} for r in by_n[n]
        )
        paths.append(_write_rows(stress_path(directory, n), STRESS_FIELDS, rows))
        logger.debug("wrote %d stress rows for n=%d", len(by_n[n]), n)
    return paths


def _read_rows(path: Path, fields: Sequence[str]) -> List[Dict[str, str]]:
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or set(fields) - set(reader.fieldnames):
            raise ConfigError(f"{path}: header must contain {','.join(fields)}")
        return list(reader)


def load_stress_csv(path: PathLike, n: Optional[int] = None) -> List[ContagionRecord]:
    """Read a stress table; N comes from the ``stress_n<N>.csv`` name unless given."""
    path = Path(path)
    if n is None:
        match = _STRESS_NAME.search(path.name)
        if match is None:
            raise ConfigError(f"{path}: cannot infer N from the file name")
        n = int(match.group(1))
    records = []
    try:
        for row in _read_rows(path, STRESS_FIELDS):
            records.append(
                ContagionRecord(
                    n=n,
                    kappa=float(row["kappa"]),
                    theta=float(row["theta"]),
                    method=ContagionMethod(row["method"]),
                    xi_mean=float(row["xi_mean"]),
                    xi_min=float(row["xi_min"]),
                    xi_max=float(row["xi_max"]),
                    trials=0,
                )
            )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return records


def save_fits(path: PathLike, fits: Iterable[FitRecord]) -> Path:
    path = Path(path)
    save_json(
        [
            {
                "n": f.n,
                "kappa": f.kappa,
                "method": f.method.value,
                "theta_star": f.theta_star,
                "beta": f.beta,
                "beta_over_n": f.beta_over_n,
                "residual": f.residual,
            }
            for f in fits
        ],
        path,
    )
    return path


def load_fits(path: PathLike) -> List[FitRecord]:
    data = load_json(path)
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list of fits")
    try:
        return [
            FitRecord(
                n=int(item["n"]),
                kappa=float(item["kappa"]),
                method=ContagionMethod(item["method"]),
                theta_star=float(item["theta_star"]),
                beta=float(item["beta"]),
                residual=float(item["residual"]),
            )
            for item in data
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed fit entry ({exc})") from exc


def save_outcomes_csv(path: PathLike, outcomes: Iterable[CascadeOutcome]) -> Path:
    rows = (
        {
            "origin": o.origin,
            "rounds": o.rounds,
            "failed": len(o.failed),
            "fraction": o.fraction,
        }
        for o in outcomes
    )
    return _write_rows(Path(path), OUTCOME_FIELDS, rows)
