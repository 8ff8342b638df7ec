"""
Experiment Configuration
実験設定（YAML）の読み込みとスキーマ検証

One YAML file per run:

    scenario: decay
    geometry: {model: waveguide, n_atoms: 10, d_over_lambda: 0.1}
    numerical: {seed: 7, trajectories: 2000, t_max: 30.0, t_points: 301}
    output: {directory: results/decay_n10, formats: [csv]}
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from ..core.coupling import (
    ArrayGeometry,
    CouplingModel,
    chain_geometry,
    spacing_from_wavelength_ratio,
)
from ..core.errors import ConfigReadError, ConfigValidationError

SCENARIOS = ("spectrum", "decay", "clock", "rate-model", "liouvillian", "mean-field", "mps", "3d-spectrum")

MODEL_ALIASES = {
    "free-space-parallel": CouplingModel.FREE_SPACE_PARALLEL,
    "free-space-perpendicular": CouplingModel.FREE_SPACE_PERPENDICULAR,
    "waveguide": CouplingModel.WAVEGUIDE,
    "independent": CouplingModel.INDEPENDENT,
    "cube-3d": CouplingModel.CUBE_3D,
}

INITIAL_STATES = ("fully-inverted", "clock")


def _positive(x) -> bool:
    return x > 0


def _non_negative(x) -> bool:
    return x >= 0


def _at_least(n: int) -> Callable[[Any], bool]:
    return lambda x: x >= n


def _window(x) -> bool:
    return len(x) == 2 and 0 <= x[0] < x[1]


def _schedule(x) -> bool:
    return len(x) > 0 and all(len(seg) == 2 and seg[1] > 0 for seg in x)


def _fraction(x) -> bool:
    return 0.0 <= x <= 1.0


# key -> (accepted types, range check, human-readable range)
NUMERICAL_FIELDS: Dict[str, Tuple[tuple, Optional[Callable[[Any], bool]], str]] = {
    "seed": ((int,), _non_negative, ">= 0"),
    "trajectories": ((int,), _positive, ">= 1"),
    "t_max": ((int, float), _positive, "> 0"),
    "t_points": ((int,), _at_least(2), ">= 2"),
    "detuning": ((int, float), None, "any"),
    "initial_state": ((str,), lambda x: x in INITIAL_STATES, f"one of {INITIAL_STATES}"),
    "phase_per_site": ((int, float), None, "any"),
    "coherent_only": ((bool,), None, "true/false"),
    "manifolds": ((list,), lambda x: len(x) > 0 and all(isinstance(m, int) and m >= 0 for m in x), "non-empty list of m_ex >= 0"),
    "max_manifold": ((int,), _non_negative, ">= 0"),
    "bond_dimension": ((int,), _positive, ">= 1"),
    "dt_schedule": ((list,), _schedule, "list of [until, dt] with dt > 0"),
    "truncation_ceiling": ((int, float), _positive, "> 0"),
    "convergence_time": ((int, float), _non_negative, ">= 0"),
    "omega0": ((int, float), None, "any"),
    "delta_span": ((int, float), _positive, "> 0"),
    "delta_points": ((int,), _at_least(3), ">= 3"),
    "fit_window": ((list,), _window, "[start, end] with 0 <= start < end"),
    "r_body": ((int,), _positive, ">= 1"),
    "u": ((int, float), _fraction, "in [0, 1]"),
    "approximate_rates": ((bool,), None, "true/false"),
    "record_manifolds": ((bool,), None, "true/false"),
}

# required numerical keys per scenario
SCENARIO_SCHEMA: Dict[str, Tuple[str, ...]] = {
    "spectrum": ("seed", "manifolds"),
    "decay": ("seed", "trajectories", "t_max", "t_points"),
    "clock": ("seed", "trajectories", "t_max", "t_points"),
    "rate-model": ("seed", "t_max", "t_points"),
    "liouvillian": ("seed",),
    "mean-field": ("seed", "t_max", "t_points"),
    "mps": ("seed", "t_max", "t_points", "bond_dimension"),
    "3d-spectrum": ("seed",),
}

GEOMETRY_KEYS = ("model", "n_atoms", "k0d", "d_over_lambda", "sides")
OUTPUT_KEYS = ("directory", "formats")
TOP_KEYS = ("scenario", "geometry", "numerical", "output")


@dataclass
class SchemaReport:
    """スキーマ検証レポート"""
    unknown_keys: List[str] = field(default_factory=list)
    missing_keys: List[str] = field(default_factory=list)
    range_errors: List[str] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not (self.unknown_keys or self.missing_keys or self.range_errors)

    def merge(self, other: "SchemaReport") -> "SchemaReport":
        self.unknown_keys.extend(other.unknown_keys)
        self.missing_keys.extend(other.missing_keys)
        self.range_errors.extend(other.range_errors)
        return self

    def messages(self) -> List[str]:
        return (
            [f"unknown key: {k}" for k in self.unknown_keys]
            + [f"missing key: {k}" for k in self.missing_keys]
            + [f"out of range: {e}" for e in self.range_errors]
        )

    def to_dict(self) -> Dict[str, List[str]]:
        return asdict(self)


def _unknown(data: Dict[str, Any], allowed, prefix: str) -> List[str]:
    return [f"{prefix}{k}" for k in data if k not in allowed]


@dataclass
class GeometryBlock:
    """配置ブロック"""
    model: str = "free-space-parallel"
    n_atoms: Optional[int] = None
    k0d: Optional[float] = None
    d_over_lambda: Optional[float] = None
    sides: Optional[List[int]] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeometryBlock":
        return cls(**{k: data[k] for k in GEOMETRY_KEYS if k in data})

    def validate(self, scenario: str) -> SchemaReport:
        report = SchemaReport()
        if self.model not in MODEL_ALIASES:
            report.range_errors.append(f"geometry.model '{self.model}' not in {sorted(MODEL_ALIASES)}")
            return report
        if self.k0d is None and self.d_over_lambda is None:
            report.missing_keys.append("geometry.k0d")
        if self.k0d is not None and self.d_over_lambda is not None:
            report.range_errors.append("geometry: give either k0d or d_over_lambda, not both")
        spacing = self.k0d if self.k0d is not None else self.d_over_lambda
        if spacing is not None and (not isinstance(spacing, (int, float)) or spacing <= 0):
            report.range_errors.append(f"geometry spacing must be > 0, got {spacing}")

        if scenario == "3d-spectrum" or self.model == "cube-3d":
            if scenario != "3d-spectrum" or self.model != "cube-3d":
                report.range_errors.append("3d-spectrum requires geometry.model cube-3d and vice versa")
            if not self.sides:
                report.missing_keys.append("geometry.sides")
            elif not all(isinstance(s, int) and s >= 1 for s in self.sides):
                report.range_errors.append(f"geometry.sides must be positive integers, got {self.sides}")
            return report

        if self.n_atoms is None:
            report.missing_keys.append("geometry.n_atoms")
        elif not isinstance(self.n_atoms, int) or self.n_atoms < 1:
            report.range_errors.append(f"geometry.n_atoms must be >= 1, got {self.n_atoms}")
        if scenario == "mps" and self.model != "waveguide":
            report.range_errors.append("mps scenario supports only the waveguide model")
        return report

    @property
    def coupling_model(self) -> CouplingModel:
        return MODEL_ALIASES[self.model]

    @property
    def spacing_k0d(self) -> float:
        if self.k0d is not None:
            return float(self.k0d)
        return spacing_from_wavelength_ratio(float(self.d_over_lambda))

    def chain(self) -> ArrayGeometry:
        return chain_geometry(int(self.n_atoms), self.spacing_k0d, self.coupling_model)


@dataclass
class NumericalBlock:
    """数値パラメータブロック"""
    values: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NumericalBlock":
        return cls(dict(data))

    def validate(self, scenario: str) -> SchemaReport:
        report = SchemaReport(unknown_keys=_unknown(self.values, NUMERICAL_FIELDS, "numerical."))
        for key in SCENARIO_SCHEMA.get(scenario, ()):
            if key not in self.values:
                report.missing_keys.append(f"numerical.{key}")
        for key, value in self.values.items():
            if key not in NUMERICAL_FIELDS:
                continue
            types, check, label = NUMERICAL_FIELDS[key]
            # bool is an int subclass; only accept it where a bool is asked for
            if isinstance(value, bool) and bool not in types:
                report.range_errors.append(f"numerical.{key}={value!r} must be {label}")
                continue
            if not isinstance(value, types):
                report.range_errors.append(f"numerical.{key}={value!r} has the wrong type, expected {label}")
                continue
            try:
                ok = check is None or bool(check(value))
            except (TypeError, IndexError):
                ok = False
            if not ok:
                report.range_errors.append(f"numerical.{key}={value!r} must be {label}")
        return report

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, float(self.values["t_max"]), int(self.values["t_points"]))

    def dt_schedule(self) -> Optional[Tuple[Tuple[float, float], ...]]:
        raw = self.values.get("dt_schedule")
        if raw is None:
            return None
        return tuple((float(until), float(dt)) for until, dt in raw)

    def fit_window(self) -> Optional[Tuple[float, float]]:
        raw = self.values.get("fit_window")
        return None if raw is None else (float(raw[0]), float(raw[1]))


@dataclass
class OutputBlock:
    """出力ブロック"""
    directory: str = "results"
    formats: List[str] = field(default_factory=lambda: ["csv"])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OutputBlock":
        return cls(**{k: data[k] for k in OUTPUT_KEYS if k in data})

    def validate(self) -> SchemaReport:
        report = SchemaReport()
        if not isinstance(self.directory, str) or not self.directory:
            report.range_errors.append("output.directory must be a non-empty string")
        if not isinstance(self.formats, list) or any(f != "csv" for f in self.formats):
            report.range_errors.append(f"output.formats supports only ['csv'], got {self.formats}")
        return report


@dataclass
class ExperimentConfig:
    """実験設定"""
    scenario: str
    geometry: GeometryBlock
    numerical: NumericalBlock
    output: OutputBlock
    raw: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Any, source: Optional[str] = None) -> Tuple["ExperimentConfig", SchemaReport]:
        report = SchemaReport()
        if not isinstance(data, dict):
            report.range_errors.append("top level must be a mapping")
            data = {}
        report.unknown_keys.extend(_unknown(data, TOP_KEYS, ""))
        scenario = data.get("scenario")
        if scenario is None:
            report.missing_keys.append("scenario")
        elif scenario not in SCENARIOS:
            report.range_errors.append(f"scenario '{scenario}' not in {SCENARIOS}")

        blocks = {}
        for name in ("geometry", "numerical", "output"):
            block = data.get(name, {} if name == "output" else None)
            if block is None:
                report.missing_keys.append(name)
                block = {}
            if not isinstance(block, dict):
                report.range_errors.append(f"{name} must be a mapping")
                block = {}
            blocks[name] = block

        report.unknown_keys.extend(_unknown(blocks["geometry"], GEOMETRY_KEYS, "geometry."))
        report.unknown_keys.extend(_unknown(blocks["output"], OUTPUT_KEYS, "output."))
        config = cls(
            scenario=scenario or "",
            geometry=GeometryBlock.from_dict(blocks["geometry"]),
            numerical=NumericalBlock.from_dict(blocks["numerical"]),
            output=OutputBlock.from_dict(blocks["output"]),
            raw=data,
            source=source,
        )
        if scenario in SCENARIOS:
            if "geometry" in data:
                report.merge(config.geometry.validate(scenario))
            report.merge(config.numerical.validate(scenario))
        report.merge(config.output.validate())
        return config, report

    @staticmethod
    def read(path: Union[str, Path]) -> Any:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigReadError(f"cannot read config {path}: {e}") from e
        try:
            return yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigValidationError(f"config {path} is not valid YAML: {e}",
                                        SchemaReport(range_errors=[f"yaml: {e}"])) from e

    @classmethod
    def inspect(cls, path: Union[str, Path]) -> SchemaReport:
        """Schema report without raising on schema violations."""
        try:
            data = cls.read(path)
        except ConfigValidationError as e:
            return e.report
        return cls.from_dict(data, str(path))[1]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        config, report = cls.from_dict(cls.read(path), str(path))
        if not report.is_valid:
            raise ConfigValidationError(f"config {path} violates the schema: {'; '.join(report.messages())}", report)
        return config

    def echo(self) -> Dict[str, Any]:
        """Config as plain data for the manifest (inf rendered as a string)."""
        def clean(value):
            if isinstance(value, dict):
                return {k: clean(v) for k, v in value.items()}
            if isinstance(value, list):
                return [clean(v) for v in value]
            if isinstance(value, float) and not math.isfinite(value):
                return str(value)
            return value
        return clean(self.raw)
