"""
Spectrum, Time-Series and Report Files

Formats:
- spectrum CSV: header `frequency_hz,signal` (extra columns such as `fit`
  are allowed after those two), one row per grid point
- time-series CSV: first line `# sample_rate_hz=<float>`, then a
  `voltage_v` column
- reports: a single JSON document

Floats are written with 17 significant digits and parsed with Python's
correctly rounded float(), so every file written here re-reads bit-exactly.
"""

import json
import re
from pathlib import Path

import numpy as np
import pandas as pd

from errors import InsufficientDataError, ParseError
from lineshape import Spectrum
from sensitivity import TimeSeries

FLOAT_FORMAT = "%.17g"
SPECTRUM_COLUMNS = ("frequency_hz", "signal")
VOLTAGE_COLUMN = "voltage_v"
RATE_HEADER = re.compile(r"^#\s*sample_rate_hz\s*=\s*(\S+)\s*$")


def _read_lines(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return f.read().splitlines()


def _parse_column(path, frame, column, first_line):
    values = []
    for offset, cell in enumerate(frame[column]):
        try:
            values.append(float(cell))
        except (TypeError, ValueError):
            raise ParseError(
                path, first_line + offset, f"non-numeric {column} value {cell!r}"
            ) from None
    return np.array(values, dtype=float)


def load_spectrum_csv(path):
    """Read a `frequency_hz,signal` CSV into a Spectrum."""
    lines = _read_lines(path)
    if not lines:
        raise ParseError(path, 1, "empty file, expected header frequency_hz,signal")
    header = [name.strip() for name in lines[0].split(",")]
    if tuple(header[:2]) != SPECTRUM_COLUMNS:
        raise ParseError(path, 1, f"expected header frequency_hz,signal, got {lines[0]!r}")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    freqs = _parse_column(path, frame, "frequency_hz", 2)
    signal = _parse_column(path, frame, "signal", 2)

    bad = np.flatnonzero(np.diff(freqs) <= 0)
    if bad.size:
        row = int(bad[0]) + 1
        raise ParseError(
            path,
            row + 2,
            f"frequency {freqs[row]!r} does not increase over {freqs[row - 1]!r}",
        )
    return Spectrum(freqs, signal)


def save_spectrum_csv(spectrum, path, fit=None):
    """Write a spectrum; an optional fitted curve goes in a third `fit` column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = {"frequency_hz": spectrum.freqs, "signal": spectrum.signal}
    if fit is not None:
        columns["fit"] = np.asarray(fit, dtype=float)
    pd.DataFrame(columns).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )
    return path


def load_timeseries_csv(path):
    """Read a voltage time series with its `# sample_rate_hz=` header."""
    lines = _read_lines(path)
    match = RATE_HEADER.match(lines[0]) if lines else None
    if match is None:
        raise ParseError(path, 1, "missing '# sample_rate_hz=<float>' header")
    try:
        rate = float(match.group(1))
    except ValueError:
        raise ParseError(path, 1, f"bad sample rate {match.group(1)!r}") from None

    if len(lines) < 2 or lines[1].strip() != VOLTAGE_COLUMN:
        raise ParseError(path, 2, f"expected column header {VOLTAGE_COLUMN}")
    frame = pd.read_csv(path, skiprows=1, dtype=str, keep_default_na=False)
    samples = _parse_column(path, frame, VOLTAGE_COLUMN, 3)
    if samples.size < 2:
        raise InsufficientDataError(f"{path}: time series needs at least 2 samples")
    return TimeSeries(sample_rate=rate, samples=samples)


def save_timeseries_csv(ts, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# sample_rate_hz={ts.sample_rate!r}\n")
        pd.DataFrame({VOLTAGE_COLUMN: ts.samples}).to_csv(
            f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
    return path


def save_table_csv(columns, path):
    """Plot-ready table from a mapping of column name -> values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(columns).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )
    return path


def load_table_csv(path):
    """Read a table written by save_table_csv without rounding."""
    return pd.read_csv(path, float_precision="round_trip")


def dumps_json(document, indent=2):
    return json.dumps(document, indent=indent, ensure_ascii=False, allow_nan=True) + "\n"


def write_json(document, path, indent=2):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_json(document, indent))
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
