"""Run configuration and file formats.

Config is a JSON document with three top-level blocks::

    {
      "twb":   {"mean_m": 1.0, "modes": 100, "eta": 0.17, "t": 0.4},
      "noise": {"kind": "thermal", "mean": 0.5, "modes": 1},
      "mc":    {"shots": 1000000, "seed": 7}
    }

``twb`` takes either ``eta`` or ``eta1``/``eta2``. Unknown keys anywhere are
rejected. CSV files use ``.`` decimals, LF line endings and a mandatory header;
floats are written with ``repr`` (shortest round-trip form).
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from .errors import DomainError, TbnrfError
from .fitting import DataSeries, FitResult, XRole
from .nrf import TwbParams
from .photon_stats import Coherent, Conditional, Fock, MultiThermal, NoiseModel, NoNoise

__all__ = [
    "ConfigError",
    "RunConfig",
    "McSettings",
    "parse_config",
    "load_config",
    "parse_range",
    "fmt",
    "write_csv",
    "read_csv",
    "read_series",
    "write_series",
    "read_shots",
    "write_shots",
    "format_fit_report",
    "parse_fit_report",
]


class ConfigError(TbnrfError, ValueError):
    """Malformed config, CSV or command-line value; ``key`` names the culprit."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class McSettings:
    shots: int
    seed: int


@dataclass(frozen=True)
class RunConfig:
    twb: TwbParams
    noise: NoiseModel
    mc: Optional[McSettings] = None


_NOISE_FIELDS = {
    "none": {},
    "coherent": {"mean": True},
    "thermal": {"mean": True, "modes": False},
    "fock": {"photon_number": True, "detection_efficiency": False},
    "conditional": {"unconditioned_mean": True, "modes": True, "herald_value": True, "herald_efficiency": True},
}


def _number(block: Mapping, key: str, path: str, integer: bool = False):
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key} must be a number, got {v!r}", f"{path}.{key}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(f"{path}.{key} must be an integer, got {v!r}", f"{path}.{key}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key} must be finite, got {v!r}", f"{path}.{key}")
    return int(v) if integer else float(v)


def _check_keys(block: Any, path: str, required: Iterable[str], optional: Iterable[str] = ()):
    if not isinstance(block, dict):
        raise ConfigError(f"{path} must be an object", path)
    required, optional = set(required), set(optional)
    for k in block:
        if k not in required | optional:
            raise ConfigError(f"unknown key {path}.{k}", f"{path}.{k}")
    for k in sorted(required):
        if k not in block:
            raise ConfigError(f"missing key {path}.{k}", f"{path}.{k}")


def _parse_twb(block) -> TwbParams:
    _check_keys(block, "twb", ("mean_m", "modes"), ("eta", "eta1", "eta2", "t"))
    if "eta" in block and ("eta1" in block or "eta2" in block):
        raise ConfigError("give either twb.eta or twb.eta1/twb.eta2, not both", "twb.eta")
    if "eta" not in block and "eta1" not in block:
        raise ConfigError("missing key twb.eta", "twb.eta")
    if "eta" in block:
        eta1 = eta2 = _number(block, "eta", "twb")
    else:
        eta1 = _number(block, "eta1", "twb")
        eta2 = _number(block, "eta2", "twb") if "eta2" in block else eta1
    t = _number(block, "t", "twb") if "t" in block else 1.0
    try:
        return TwbParams(_number(block, "mean_m", "twb"), _number(block, "modes", "twb"), eta1, eta2, t)
    except DomainError as exc:
        raise ConfigError(f"twb: {exc}", "twb") from exc


def _parse_noise(block, twb: TwbParams) -> NoiseModel:
    if not isinstance(block, dict):
        raise ConfigError("noise must be an object", "noise")
    kind = block.get("kind")
    if kind not in _NOISE_FIELDS:
        raise ConfigError(f"noise.kind must be one of {sorted(_NOISE_FIELDS)}, got {kind!r}", "noise.kind")
    fields = _NOISE_FIELDS[kind]
    _check_keys(block, "noise", ["kind"] + [k for k, req in fields.items() if req],
                [k for k, req in fields.items() if not req])
    try:
        if kind == "none":
            return NoNoise()
        if kind == "coherent":
            return Coherent(_number(block, "mean", "noise"))
        if kind == "thermal":
            modes = _number(block, "modes", "noise") if "modes" in block else 1.0
            return MultiThermal(_number(block, "mean", "noise"), modes)
        if kind == "fock":
            # default: the noise crosses the same channel and detector as arm 2
            eff = (_number(block, "detection_efficiency", "noise")
                   if "detection_efficiency" in block else twb.eta2 * twb.t)
            return Fock(_number(block, "photon_number", "noise", integer=True), eff)
        return Conditional(
            _number(block, "unconditioned_mean", "noise"),
            _number(block, "modes", "noise"),
            _number(block, "herald_value", "noise", integer=True),
            _number(block, "herald_efficiency", "noise"),
        )
    except DomainError as exc:
        raise ConfigError(f"noise: {exc}", "noise") from exc


def _parse_mc(block) -> McSettings:
    _check_keys(block, "mc", ("shots", "seed"))
    shots = _number(block, "shots", "mc", integer=True)
    seed = block["seed"]
    # seeds are read as exact ints; a float would lose bits above 2**53
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"mc.seed must be an integer, got {seed!r}", "mc.seed")
    if shots < 2:
        raise ConfigError(f"mc.shots must be >= 2, got {shots}", "mc.shots")
    if not 0 <= seed < 2**64:
        raise ConfigError(f"mc.seed must be a 64-bit unsigned integer, got {seed}", "mc.seed")
    return McSettings(shots, int(seed))


def parse_config(doc: Any) -> RunConfig:
    _check_keys(doc, "config", ("twb", "noise"), ("mc",))
    twb = _parse_twb(doc["twb"])
    noise = _parse_noise(doc["noise"], twb)
    mc = _parse_mc(doc["mc"]) if "mc" in doc else None
    return RunConfig(twb, noise, mc)


def load_config(path) -> RunConfig:
    """Read and strictly validate a JSON run configuration."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc)


def parse_range(text: str, name: str = "range") -> np.ndarray:
    """``start:step:stop`` grid; stop is included when within 1e-9 of a grid point.

    A bare number gives a single-point grid.
    """
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{name}: expected start:step:stop, got {text!r}", name) from None
    if len(vals) == 1:
        vals = [vals[0], 1.0, vals[0]]
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{name}: expected start:step:stop, got {text!r}", name)
    start, step, stop = vals
    if step <= 0:
        raise ConfigError(f"{name}: step must be > 0, got {step}", name)
    if stop < start:
        raise ConfigError(f"{name}: stop must be >= start", name)
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def fmt(v) -> str:
    """Shortest decimal that round-trips to the same double."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path, header: list[str], integer: bool = False) -> np.ndarray:
    """Numeric CSV with an exact header; errors name the row and column."""
    conv = int if integer else float
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file, expected header {','.join(header)}")
    got = [h.strip() for h in rows[0]]
    if got != header:
        raise ConfigError(f"{path}: header must be {','.join(header)}, got {','.join(got)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}: row {lineno} has {len(row)} columns, expected {len(header)}", f"row {lineno}")
        vals = []
        for col, cell in zip(header, row):
            try:
                v = conv(cell.strip())
            except ValueError:
                raise ConfigError(f"{path}: row {lineno}, column {col}: not a number: {cell!r}", f"row {lineno}") from None
            if not math.isfinite(v):
                raise ConfigError(f"{path}: row {lineno}, column {col}: not finite", f"row {lineno}")
            vals.append(v)
        out.append(vals)
    return np.array(out, dtype=np.int64 if integer else float).reshape(-1, len(header))


SERIES_HEADER = ["x", "r", "sigma_r"]
SHOTS_HEADER = ["k1", "k2"]
SCAN_HEADER = ["mean_twb", "mean_noise", "r"]


def read_series(path, x_role=XRole.NOISE_MEAN) -> DataSeries:
    arr = read_csv(path, SERIES_HEADER)
    for i, (x, _, s) in enumerate(arr, start=2):
        if not s > 0:
            raise ConfigError(f"{path}: row {i}, column sigma_r: must be > 0, got {s!r}", f"row {i}")
        if x < 0:
            raise ConfigError(f"{path}: row {i}, column x: must be >= 0, got {x!r}", f"row {i}")
    if arr.shape[0] < 2:
        raise ConfigError(f"{path}: at least 2 data rows are required")
    return DataSeries(arr[:, 0], arr[:, 1], arr[:, 2], x_role)


def write_series(path, series: DataSeries) -> None:
    write_csv(path, SERIES_HEADER, zip(series.x, series.r, series.sigma_r))


def read_shots(path):
    arr = read_csv(path, SHOTS_HEADER, integer=True)
    return arr[:, 0], arr[:, 1]


def write_shots(path, k1, k2) -> None:
    # bulk write; identical bytes to write_csv for integer rows
    data = np.column_stack([np.asarray(k1, dtype=np.int64), np.asarray(k2, dtype=np.int64)])
    with open(path, "w", newline="") as fh:
        fh.write("k1,k2\n")
        np.savetxt(fh, data, fmt="%d", delimiter=",", newline="\n")


def format_fit_report(result: FitResult, prefix: str = "") -> str:
    """Flat ``key=value`` lines: estimates, frozen values, chi2_nu, dof, status."""
    lines = []
    for k, v in result.estimates.items():
        lines.append(f"{prefix}{k}={fmt(v)}")
    for k, v in result.frozen.items():
        lines.append(f"{prefix}frozen.{k}={fmt(v)}")
    lines.append(f"{prefix}chi2_nu={fmt(result.chi2_nu)}")
    lines.append(f"{prefix}dof={result.dof}")
    lines.append(f"{prefix}converged={'true' if result.converged else 'false'}")
    lines.append(f"{prefix}n_restarts_used={result.n_restarts_used}")
    lines.append(f"{prefix}weakly_identified={','.join(result.weakly_identified)}")
    return "\n".join(lines) + "\n"


def parse_fit_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"report line without '=': {line!r}")
        out[key.strip()] = value.strip()
    return out


def ensure_writable(path) -> None:
    """Raise OSError early if ``path`` cannot be created."""
    parent = os.path.dirname(os.path.abspath(path)) or "."
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"directory does not exist: {parent}")
