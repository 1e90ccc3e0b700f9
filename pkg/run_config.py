"""
Run Configuration

Loads config.toml into a frozen RunConfig and validates every field at load
time. Errors are collected for all fields and reported together with their
dotted keys (e.g. `spin.D_hz`).

CLI flags (--seed, --repeats, --mode, --out-dir) override file values through
the same dotted keys.
"""

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from errors import ConfigError
from spin_model import GAMMA_E_HZ_PER_T

# Use built-in tomllib for Python 3.11+, fallback to tomli for older versions
if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_CONFIG = Path(__file__).parent / "config.toml"

MODES = ("zeeman", "zfs")


@dataclass(frozen=True)
class RunSettings:
    modes: Tuple[str, ...] = MODES
    seed: int = 12345
    repeats: int = 1
    max_workers: int = 4


@dataclass(frozen=True)
class SpinSettings:
    D_hz: float = 2.87e9
    E_hz: float = 5e6
    gamma_e_hz_per_t: float = GAMMA_E_HZ_PER_T
    bias_field_t: float = 5e-3


@dataclass(frozen=True)
class GridSettings:
    half_span_hz: float = 250e6
    n_points: int = 601


@dataclass(frozen=True)
class SimulationSettings:
    noise_sigma: float = 1e-3
    zeeman_fwhm_hz: float = 9e6
    zfs_fwhm_hz: float = 21e6
    per_axis_contrast: float = 0.02
    zfs_contrast: float = 0.007
    field_jitter: float = 0.0


@dataclass(frozen=True)
class CalibrationSettings:
    temperatures_k: Tuple[float, ...] = (298.0, 303.0, 308.0, 313.0, 318.0, 323.0)
    true_slope_hz_per_k: float = -75.33e3
    reference_temperature_k: float = 298.0


@dataclass(frozen=True)
class FitSettings:
    shared_fwhm: bool = False
    zfs_shared_fwhm: bool = True
    max_iterations: int = 200
    min_prominence: Optional[float] = None


@dataclass(frozen=True)
class SenseSettings:
    enabled: bool = True
    timeseries_path: Optional[str] = None
    sample_rate_hz: float = 100.0
    duration_s: float = 600.0
    white_density_v_per_rthz: float = 1e-6
    flicker_density_v_per_rthz: float = 0.0
    volts_per_unit: float = 1.0
    segment_len: Optional[int] = None
    overlap: float = 0.5
    dDdT_override_hz_per_k: Optional[float] = None


@dataclass(frozen=True)
class OutputSettings:
    out_dir: str = "output"
    indent_spaces: int = 2
    include_covariance: bool = True
    write_plots: bool = True


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    spin: SpinSettings = field(default_factory=SpinSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    fit: FitSettings = field(default_factory=FitSettings)
    sense: SenseSettings = field(default_factory=SenseSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_overrides(self, overrides):
        return build_run_config(self.to_dict(), overrides)


SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key, value, default, errors):
    """Coerce a TOML value to the type of the dataclass default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        errors.append(f"{key}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        errors.append(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        errors.append(f"{key}: expected a number, got {value!r}")
    elif isinstance(default, tuple):
        if isinstance(value, (list, tuple)):
            if default and isinstance(default[0], float):
                if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                    return tuple(float(v) for v in value)
                errors.append(f"{key}: expected a list of numbers")
                return default
            return tuple(value)
        if isinstance(value, str):
            return (value,)
        errors.append(f"{key}: expected a list, got {value!r}")
    else:
        # Optional fields default to None
        return value
    return default


def _build_section(name, cls, values, errors):
    if not isinstance(values, dict):
        errors.append(f"{name}: expected a table")
        return cls()
    defaults = cls()
    kwargs = {}
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in values.items():
        if key not in known:
            errors.append(f"{name}.{key}: unknown key")
            continue
        kwargs[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key), errors)
    return cls(**kwargs)


def _apply_overrides(document, overrides):
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        document.setdefault(section, {})[key] = value
    return document


def _validate(config, errors):
    run, spin, grid = config.run, config.spin, config.grid
    sim, cal, fit, sense = config.simulation, config.calibration, config.fit, config.sense

    bad_modes = [m for m in run.modes if m not in MODES]
    if not run.modes or bad_modes:
        errors.append(f"run.modes: must be a non-empty subset of {list(MODES)}, got {list(run.modes)}")
    if len(set(run.modes)) != len(run.modes):
        errors.append("run.modes: duplicate entries")
    if run.repeats < 1:
        errors.append("run.repeats: must be >= 1")
    if run.max_workers < 1:
        errors.append("run.max_workers: must be >= 1")

    if not spin.D_hz > 0:
        errors.append("spin.D_hz: must be > 0")
    if not spin.E_hz >= 0:
        errors.append("spin.E_hz: must be >= 0")
    if not spin.gamma_e_hz_per_t > 0:
        errors.append("spin.gamma_e_hz_per_t: must be > 0")
    if spin.bias_field_t < 0:
        errors.append("spin.bias_field_t: must be >= 0")
    elif spin.D_hz > 0:
        strongest = spin.bias_field_t * (1.0 + abs(sim.field_jitter))
        if spin.gamma_e_hz_per_t * strongest >= spin.D_hz / 2:
            errors.append("spin.bias_field_t: gamma_e*|B| must stay below D/2")

    if grid.n_points < 16:
        errors.append("grid.n_points: must be >= 16")
    if not grid.half_span_hz > 0:
        errors.append("grid.half_span_hz: must be > 0")

    if not sim.noise_sigma >= 0:
        errors.append("simulation.noise_sigma: must be >= 0")
    for key in ("zeeman_fwhm_hz", "zfs_fwhm_hz"):
        if not getattr(sim, key) > 0:
            errors.append(f"simulation.{key}: must be > 0")
    if not 0 < sim.per_axis_contrast < 0.25:
        errors.append("simulation.per_axis_contrast: must be in (0, 0.25) so four stacked axes stay below 1")
    if not 0 < sim.zfs_contrast < 0.5:
        errors.append("simulation.zfs_contrast: must be in (0, 0.5) so both dips stay below 1")
    if not 0 <= sim.field_jitter < 1:
        errors.append("simulation.field_jitter: must be in [0, 1)")

    temps = cal.temperatures_k
    if len(temps) < 3:
        errors.append("calibration.temperatures_k: at least 3 temperatures required")
    elif max(temps) - min(temps) < 10:
        errors.append("calibration.temperatures_k: must span at least 10 K")
    if any(not 100 <= t <= 700 for t in temps):
        errors.append("calibration.temperatures_k: values must lie in 100-700 K")
    if cal.true_slope_hz_per_k == 0:
        errors.append("calibration.true_slope_hz_per_k: must be nonzero")

    if fit.max_iterations < 1:
        errors.append("fit.max_iterations: must be >= 1")
    if fit.min_prominence is not None and not (
        isinstance(fit.min_prominence, (int, float)) and fit.min_prominence > 0
    ):
        errors.append("fit.min_prominence: must be a positive number")

    if not sense.sample_rate_hz > 0:
        errors.append("sense.sample_rate_hz: must be > 0")
    if sense.timeseries_path is None and sense.duration_s * sense.sample_rate_hz < 64:
        errors.append("sense.duration_s: synthetic series needs at least 64 samples")
    if not 0 <= sense.overlap < 1:
        errors.append("sense.overlap: must be in [0, 1)")
    if sense.segment_len is not None and (
        not isinstance(sense.segment_len, int) or sense.segment_len < 8
    ):
        errors.append("sense.segment_len: must be an integer >= 8")
    if sense.white_density_v_per_rthz < 0 or sense.flicker_density_v_per_rthz < 0:
        errors.append("sense: noise densities must be >= 0")
    if not sense.volts_per_unit > 0:
        errors.append("sense.volts_per_unit: must be > 0")
    if sense.dDdT_override_hz_per_k is not None and sense.dDdT_override_hz_per_k == 0:
        errors.append("sense.dDdT_override_hz_per_k: must be nonzero")


def build_run_config(document, overrides=None):
    """RunConfig from a parsed TOML document plus dotted-key overrides."""
    document = _apply_overrides(
        {k: dict(v) if isinstance(v, dict) else v for k, v in document.items()},
        overrides,
    )
    errors = []
    sections = {}
    for name, value in document.items():
        if name not in SECTIONS:
            errors.append(f"{name}: unknown section")
            continue
        sections[name] = _build_section(name, SECTIONS[name], value, errors)
    config = RunConfig(**sections)
    _validate(config, errors)
    if errors:
        raise ConfigError(errors)
    return config


def resolve_config_path(path=None):
    if path:
        return Path(path)
    env_path = os.getenv("ODMR_CONFIG")
    return Path(env_path) if env_path else DEFAULT_CONFIG


def load_run_config(path=None, overrides=None):
    """Load and validate config.toml (or $ODMR_CONFIG)."""
    config_path = resolve_config_path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")

    # Load TOML file (always use binary mode for tomllib/tomli)
    with open(config_path, "rb") as f:
        try:
            document = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([f"{config_path}: {e}"]) from None
    return build_run_config(document, overrides)


def add_config_arguments(parser):
    """Flags shared by every stage script."""
    parser.add_argument("--config", help="Path to config.toml (default: $ODMR_CONFIG or ./config.toml)")
    parser.add_argument("--seed", type=int, help="Override run.seed")
    parser.add_argument("--repeats", type=int, help="Override run.repeats (Monte-Carlo repeats)")
    parser.add_argument("--mode", choices=MODES, help="Run a single mode instead of run.modes")
    parser.add_argument("--out-dir", help="Override output.out_dir")
    return parser


def config_from_args(args):
    overrides = {
        "run.seed": args.seed,
        "run.repeats": args.repeats,
        "run.modes": [args.mode] if args.mode else None,
        "output.out_dir": args.out_dir,
    }
    return load_run_config(args.config, overrides)
