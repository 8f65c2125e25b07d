"""
Utility Functions
Directories, JSON helpers, timestamps, run manifests and rich result tables.
"""

import hashlib
import json
import logging
import time
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from rich.table import Table

from . import __version__
from .errors import ConfigError

logger = logging.getLogger(__name__)

DISTRIBUTION = "interbank-sras"


def ensure_directory(path: Union[str, Path]) -> Path:
    """Create a run output directory (and its parents) if missing."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def save_json(data: Any, filepath: Union[str, Path], indent: int = 2) -> None:
    """Write a manifest, report or fit list as indented JSON."""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    with open(filepath, "w") as f:
        json.dump(data, f, indent=indent, default=_json_default)


def load_json(filepath: Union[str, Path]) -> Any:
    """Read a manifest or fit list; malformed JSON is a ConfigError."""
    filepath = Path(filepath)

    if not filepath.exists():
        raise FileNotFoundError(f"File not found: {filepath}")

    with open(filepath, "r") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Invalid JSON in {filepath}: {exc}") from exc


def format_timestamp(timestamp: Optional[float] = None) -> str:
    """Local wall-clock time as stored in run manifests."""
    if timestamp is None:
        timestamp = time.time()

    return datetime.fromtimestamp(timestamp).strftime("%Y-%m-%d %H:%M:%S")


def format_duration(seconds: float) -> str:
    """Run or sweep duration as seconds, minutes or hours."""
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = seconds / 60
        return f"{minutes:.1f}m"
    else:
        hours = seconds / 3600
        return f"{hours:.1f}h"


def code_version() -> str:
    try:
        return metadata.version(DISTRIBUTION)
    except metadata.PackageNotFoundError:
        return __version__


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, default=_json_default)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_manifest(
    subcommand: str,
    config: Dict[str, Any],
    seed: Optional[int],
    outputs: Sequence[Union[str, Path]],
    duration: float = 0.0,
) -> Dict[str, Any]:
    """Everything needed to reproduce the outputs of one invocation."""
    return {
        "subcommand": subcommand,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "code_version": code_version(),
        "timestamp": format_timestamp(),
        "duration": format_duration(duration),
        "outputs": [str(p) for p in outputs],
    }


def load_manifest(filepath: Union[str, Path]) -> Dict[str, Any]:
    """Read a manifest and check that its config still matches its hash."""
    manifest = load_json(filepath)
    if not isinstance(manifest, dict) or not {"subcommand", "config"} <= set(manifest):
        raise ConfigError(f"{filepath} is not a run manifest")
    recorded = manifest.get("config_hash")
    if recorded is not None and recorded != config_hash(manifest["config"]):
        raise ConfigError(f"{filepath}: config was edited after the run")
    return manifest


def check_replay(
    manifest: Dict[str, Any], config: Dict[str, Any], force: bool = False
) -> None:
    """Refuse to replay a manifest with a different config unless forced."""
    if config_hash(config) == manifest.get("config_hash"):
        return
    changed = sorted(
        k
        for k in set(config) | set(manifest["config"])
        if config.get(k) != manifest["config"].get(k)
    )
    if not force:
        raise ConfigError(
            f"config differs from the manifest ({', '.join(changed)}); use --force"
        )
    logger.warning("replaying with a changed config: %s", ", ".join(changed))


def _fmt(value: Optional[float], spec: str = ".4g") -> str:
    return "-" if value is None or not np.isfinite(value) else format(value, spec)


def create_sweep_table(
    records: Iterable[Any], title: str = "Feasibility sweep"
) -> Table:
    """Rich table of SweepRecord rows."""
    table = Table(title=title)
    table.add_column("N", style="cyan", justify="right")
    table.add_column("kappa", style="cyan", justify="right")
    table.add_column("mean eps", style="yellow", justify="right")
    table.add_column("predicted", style="blue", justify="right")
    table.add_column("S_x", justify="right")
    table.add_column("S_q", justify="right")
    table.add_column("feasible", style="green")
    table.add_column("div/fail", style="magenta", justify="right")

    for r in records:
        table.add_row(
            str(r.n),
            f"{r.kappa:.4f}",
            _fmt(r.mean_epsilon, ".3e"),
            _fmt(r.predicted_epsilon, ".3e"),
            _fmt(r.mean_sx, ".3f"),
            _fmt(r.sq, ".3f"),
            "✓" if r.feasible else "✗",
            f"{r.diverged}/{r.failures}",
        )

    return table


def create_boundary_table(rows: List[Dict[str, Any]]) -> Table:
    """Measured feasibility boundary against the closed-form critical connectivity."""
    table = Table(title="Critical connectivity")
    table.add_column("N", style="cyan", justify="right")
    table.add_column("kappa* (law)", style="blue", justify="right")
    table.add_column("first feasible kappa", style="yellow", justify="right")
    table.add_column("grid step", justify="right")
    table.add_column("law RMS", style="magenta", justify="right")

    for row in rows:
        boundary = row.get("boundary")
        table.add_row(
            str(row["n"]),
            f"{row['kappa_star']:.4f}",
            "-" if boundary is None else f"{boundary:.4f}",
            f"{row['step']:.4f}",
            _fmt(row["rms"], ".3f"),
        )

    return table


def create_fit_table(fits: Iterable[Any], title: str = "Logistic fits") -> Table:
    """Rich table of FitRecord rows."""
    table = Table(title=title)
    table.add_column("N", style="cyan", justify="right")
    table.add_column("kappa", style="cyan", justify="right")
    table.add_column("method", style="green")
    table.add_column("theta*", style="yellow", justify="right")
    table.add_column("beta", justify="right")
    table.add_column("beta/N", style="blue", justify="right")
    table.add_column("rms", style="magenta", justify="right")

    for f in fits:
        table.add_row(
            str(f.n),
            f"{f.kappa:.4f}",
            f.method.value,
            f"{f.theta_star:.4f}",
            f"{f.beta:.3f}",
            f"{f.beta_over_n:.3f}",
            _fmt(f.residual, ".2e"),
        )

    return table


def create_outcome_table(outcomes: Iterable[Any], limit: int = 20) -> Table:
    """Rich table of per-origin cascade outcomes (first ``limit`` rows)."""
    table = Table(title="Cascades by origin")
    table.add_column("origin", style="cyan", justify="right")
    table.add_column("rounds", justify="right")
    table.add_column("failed", style="yellow", justify="right")
    table.add_column("xi", style="magenta", justify="right")

    for k, o in enumerate(outcomes):
        if k >= limit:
            break
        table.add_row(
            str(o.origin), str(o.rounds), str(len(o.failed)), f"{o.fraction:.4f}"
        )

    return table


def create_preset_table(infos: Iterable[Dict[str, Any]]) -> Table:
    """Rich table of ``ConfigManager.get_config_info`` summaries."""
    table = Table(title="Sweep presets")
    table.add_column("name", style="cyan")
    table.add_column("N", justify="right")
    table.add_column("kappa", justify="right")
    table.add_column("trials", style="yellow", justify="right")
    table.add_column("delta", justify="right")
    table.add_column("seed", style="green")
    table.add_column("theta grid", style="green")

    for info in infos:
        if info["kappa_values"]:
            kappa = ", ".join(f"{k:g}" for k in info["kappa_values"])
        else:
            kappa = f"{info['steps']} steps"
        table.add_row(
            info["name"],
            ", ".join(str(n) for n in info["n_values"]),
            kappa,
            str(info["trials"]),
            f"{info['delta']:.0e}",
            "✓" if info["has_seed"] else "-",
            "✓" if info["has_theta_grid"] else "-",
        )

    return table
