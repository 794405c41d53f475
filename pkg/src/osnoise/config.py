"""TOML experiment configuration.

A config file holds shared run settings under ``[defaults]`` and one table
per named run under ``[runs.<name>]``. Each run table is deep-merged over
the defaults (tables merge key by key, arrays and scalars replace) and the
result is validated against :data:`RUN_SCHEMA`. Every key carries its unit
in its name, e.g. ``input_power_mw`` or ``modal_mass_ng``. The format is
described in ``docs/formats.md``.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError, InvalidInputError
from .noise_models import MechanicalMode, ModeSet, OpticalConfig
from .pipeline import CalibrationConstant
from .spring_loop import LoopModel, SpringModel
from .synth import ALL_SOURCES, PowerLawPSD, RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "bundled_config",
    "run_from_table",
    "deep_merge",
    "SCHEMA_VERSION",
    "RUN_SCHEMA",
]

SCHEMA_VERSION = 1

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "wavelength_nm",
        "input_power_mw",
        "detuning_linewidths",
        "reduced_mass_ng",
        "temperature_k",
        "quality_factor",
        "modes",
        "os_freq_hz",
        "calibration_m_per_w",
    ],
    "properties": {
        "wavelength_nm": _pos,
        "input_power_mw": _nonneg,
        "detuning_linewidths": {"type": "number"},
        "reduced_mass_ng": _pos,
        "cavity_length_cm": _pos,
        "input_transmission": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_circulating_power_w": _nonneg,
        "temperature_k": _nonneg,
        "quality_factor": {"type": "number", "exclusiveMinimum": 1},
        "modes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["freq_hz", "modal_mass_ng"],
                "properties": {
                    "freq_hz": _pos,
                    "modal_mass_ng": _pos,
                    "quality_factor": {"type": "number", "exclusiveMinimum": 1},
                },
            },
        },
        "os_freq_hz": _pos,
        "damping_ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
        "loop": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["open", "integrator", "differentiator", "zpk"]},
                "unity_freq_hz": _pos,
                "gain": {"type": "number"},
                "zeros_hz": {"type": "array", "items": _nonneg},
                "poles_hz": {"type": "array", "items": _nonneg},
            },
        },
        "lfn": {
            "type": "object",
            "additionalProperties": False,
            "required": ["level_m2_per_hz"],
            "properties": {
                "level_m2_per_hz": _nonneg,
                "exponent": {"type": "number"},
                "ref_freq_hz": _pos,
            },
        },
        "detected_power_l_mw": _nonneg,
        "detected_power_m_mw": _nonneg,
        "electronics_l_w2_per_hz": _nonneg,
        "electronics_m_w2_per_hz": _nonneg,
        "electronics_f_w2_per_hz": _nonneg,
        "calibration_m_per_w": _pos,
        "qrpn_suppression": {"type": "boolean"},
        "sources": {
            "type": "array",
            "uniqueItems": True,
            "items": {"enum": sorted(ALL_SOURCES)},
        },
        "segment_length": {"type": "integer", "minimum": 256},
        "n_segments": {"type": "integer", "minimum": 1},
        "sample_rate_hz": _pos,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    },
}

TOP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "runs"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "output_dir": {"type": "string"},
                "analysis_band_hz": {
                    "type": "array",
                    "items": _pos,
                    "minItems": 2,
                    "maxItems": 2,
                },
                "calibration_uncertainty": _nonneg,
            },
        },
        "report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "format": {"enum": ["csv", "json"]},
                "clamp_negative": {"type": "boolean"},
                "budget_points": {"type": "integer", "minimum": 2},
                "residual_tolerance": _pos,
            },
        },
        "defaults": {"type": "object"},
        "runs": {"type": "object", "minProperties": 1},
    },
}

_REPORT_DEFAULTS = {
    "format": "csv",
    "clamp_negative": False,
    "budget_points": 2001,
    "residual_tolerance": 0.1,
}


def deep_merge(base, override):
    """Recursive dict merge; ``override`` wins, nested tables merge key by key."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _validate(data, schema, prefix):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join([prefix] * bool(prefix) + [str(p) for p in e.absolute_path])
        raise ConfigError(e.message, path or "<root>")


def _loop(table, spring):
    kind = table.get("kind", "open")
    if kind == "open":
        return LoopModel.open(spring)
    if kind in ("integrator", "differentiator"):
        if "unity_freq_hz" not in table:
            raise ConfigError("required for this loop kind", "loop.unity_freq_hz")
        return getattr(LoopModel, kind)(spring, table["unity_freq_hz"])
    return LoopModel(
        spring,
        gain=float(table.get("gain", 0.0)),
        zeros_hz=tuple(table.get("zeros_hz", ())),
        poles_hz=tuple(table.get("poles_hz", ())),
    )


def run_from_table(name, t, analysis_band=None):
    """Build a :class:`RunConfig` from one merged, validated run table."""
    p0 = t.get("max_circulating_power_w")
    optical = OpticalConfig(
        wavelength=t["wavelength_nm"] * 1e-9,
        input_power=t["input_power_mw"] * 1e-3,
        detuning=float(t["detuning_linewidths"]),
        reduced_mass=t["reduced_mass_ng"] * 1e-12,
        max_circulating_power=None if p0 is None else float(p0),
        cavity_length=None if "cavity_length_cm" not in t else t["cavity_length_cm"] * 1e-2,
        input_transmission=t.get("input_transmission"),
    )
    modes = [
        MechanicalMode.from_hz(
            m["modal_mass_ng"] * 1e-12,
            m["freq_hz"],
            None if "quality_factor" not in m else 1.0 / m["quality_factor"],
        )
        for m in t["modes"]
    ]
    modeset = ModeSet.from_q(modes, t["quality_factor"], float(t["temperature_k"]))
    spring = SpringModel(float(t["os_freq_hz"]), float(t.get("damping_ratio", 0.1)))
    lfn = t.get("lfn", {"level_m2_per_hz": 0.0})
    return RunConfig(
        optical=optical,
        modeset=modeset,
        loop=_loop(t.get("loop", {"kind": "open"}), spring),
        lfn_model=PowerLawPSD(
            float(lfn["level_m2_per_hz"]),
            float(lfn.get("exponent", 2.0)),
            float(lfn.get("ref_freq_hz", 1e3)),
        ),
        electronics_psd_l=float(t.get("electronics_l_w2_per_hz", 0.0)),
        electronics_psd_m=float(t.get("electronics_m_w2_per_hz", 0.0)),
        electronics_psd_f=float(t.get("electronics_f_w2_per_hz", 0.0)),
        detected_power_l=t.get("detected_power_l_mw", 1.0) * 1e-3,
        detected_power_m=t.get("detected_power_m_mw", 1.0) * 1e-3,
        calibration=float(t["calibration_m_per_w"]),
        qrpn_suppression=bool(t.get("qrpn_suppression", True)),
        sources=frozenset(t.get("sources", ALL_SOURCES)),
        segment_length=int(t.get("segment_length", 512)),
        n_segments=int(t.get("n_segments", 256)),
        sample_rate=float(t.get("sample_rate_hz", 131072.0)),
        seed=int(t.get("seed", 0)),
        analysis_band=analysis_band,
        name=name,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment: named runs plus shared analysis settings."""

    name: str
    runs: dict
    calibration: CalibrationConstant
    analysis_band: tuple | None = None
    output_dir: str = "out"
    report: dict = field(default_factory=lambda: dict(_REPORT_DEFAULTS))
    calibration_uncertainty: float = 0.0
    source: str = ""
    text: str = ""

    @property
    def run_names(self):
        return tuple(self.runs)

    def run(self, name):
        try:
            return self.runs[name]
        except KeyError:
            raise ConfigError(
                f"no run named {name!r}; available: {', '.join(self.runs)}", "runs"
            ) from None


def parse_config(text, source="<string>"):
    """Parse and validate config text; raises ConfigError with a field path."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    _validate(data, TOP_SCHEMA, "")
    exp = data.get("experiment", {})
    band = exp.get("analysis_band_hz")
    if band is not None:
        if not band[0] < band[1]:
            raise ConfigError("lower edge must be below upper edge", "experiment.analysis_band_hz")
        band = (float(band[0]), float(band[1]))
    defaults = data.get("defaults", {})
    runs = {}
    for name, table in data["runs"].items():
        if not isinstance(table, dict):
            raise ConfigError("must be a table", f"runs.{name}")
        merged = deep_merge(defaults, table)
        _validate(merged, RUN_SCHEMA, f"runs.{name}")
        try:
            runs[name] = run_from_table(name, merged, band)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"runs.{name}.{exc.path}") from None
        except InvalidInputError as exc:
            raise ConfigError(str(exc), f"runs.{name}") from None
    cal = {r.calibration for r in runs.values()}
    first = next(iter(runs.values()))
    report = dict(_REPORT_DEFAULTS)
    report.update(data.get("report", {}))
    return ExperimentConfig(
        name=exp.get("name", Path(source).stem),
        runs=runs,
        calibration=CalibrationConstant(
            first.calibration, "shared" if len(cal) == 1 else "per-run values differ"
        ),
        analysis_band=band,
        output_dir=exp.get("output_dir", "out"),
        report=report,
        calibration_uncertainty=float(exp.get("calibration_uncertainty", 0.0)),
        source=str(source),
        text=text,
    )


def load_config(path):
    """Read and validate a config file. OSError propagates for missing files."""
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), source=str(p))


def bundled_config(name="cantilever_runs"):
    """Load a config shipped with the package (``osnoise/data/<name>.toml``)."""
    ref = resources.files("osnoise") / "data" / f"{name}.toml"
    if not ref.is_file():
        raise ConfigError(f"no bundled config {name!r}")
    return parse_config(ref.read_text(encoding="utf-8"), source=f"{name}.toml")
