"""Run configuration files.

A configuration is an INI file with flat sections; every value is in SI
units and every key is optional (defaults reproduce the apparatus). Unknown
sections or keys are errors, so a typo never silently falls back to a
default. Floats are written with ``repr`` and therefore round-trip exactly.

Sections: plate, resonator, gap, readout, noise (the apparatus), model,
patch, simulation, calibration, surface, sweep.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .core import (
    ApparatusConfig,
    GapState,
    NoiseSpec,
    PlateGeometry,
    ReadoutParams,
    ResonatorParams,
    ValidationReport,
    Violation,
    validate_config,
)
from .dynamics import NYQUIST_MARGIN, settling_time
from .forces import Casimir, Electrostatic, ForceModel, Patch, PatchParams, PowerLaw, Sum
from .patchmap import SurfaceSpec
from .readout import MIN_DEMOD_PERIODS

MODEL_TERMS = ("casimir", "electrostatic", "powerlaw", "patch")
SWEEP_AXES = ("d0", "Vg", "nu_s")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    terms: tuple[str, ...] = ("casimir", "electrostatic")
    powerlaw_C: float = 0.0
    powerlaw_n: float = 4.0
    temperature: float = 300.0


@dataclass(frozen=True)
class PatchSection:
    sigma_L: float = 0.0516
    sigma_S: float = 0.0913
    lambda_min: float = 3e-6
    lambda_max: float = 100e-6


@dataclass(frozen=True)
class SimulationSection:
    duration: float = 200.0
    sample_rate: float = 4000.0
    write_series: bool = True


@dataclass(frozen=True)
class CalibrationSection:
    bias_center: float = 0.0
    bias_span: float = 0.5
    bias_points: int = 11
    integration_time: float = 100.0
    reference_distance: float = 3e-6
    distance_points: int = 10
    z_max: float = 7e-6
    distance_Vg: float = 0.0
    stiffness_mismatch: float = 1.0


@dataclass(frozen=True)
class SurfaceSection:
    sigma_L: float = 0.02
    corr_L: float = 1e-3
    sigma_S: float = 0.01
    corr_S: float = 100e-6
    extent_x: float = 1e-2
    extent_y: float = 1e-2
    pitch: float = 50e-6
    tip_diameter: float = 2e-3
    step: float = 317.5e-6
    cutoff_lambda: float = 500e-6


@dataclass(frozen=True)
class SweepSection:
    axis: str = "d0"
    grid: tuple[float, ...] = (3e-6, 4e-6, 5e-6, 6e-6, 7e-6, 8e-6, 9e-6, 10e-6)
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    apparatus: ApparatusConfig = field(default_factory=ApparatusConfig)
    model: ModelSection = field(default_factory=ModelSection)
    patch: PatchSection = field(default_factory=PatchSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    surface: SurfaceSection = field(default_factory=SurfaceSection)
    sweep: SweepSection = field(default_factory=SweepSection)


_APPARATUS_SECTIONS = {
    "plate": PlateGeometry,
    "resonator": ResonatorParams,
    "gap": GapState,
    "readout": ReadoutParams,
    "noise": NoiseSpec,
}
_RUN_SECTIONS = {
    "model": ModelSection,
    "patch": PatchSection,
    "simulation": SimulationSection,
    "calibration": CalibrationSection,
    "surface": SurfaceSection,
    "sweep": SweepSection,
}


def _section(cfg: RunConfig, name: str):
    if name in _APPARATUS_SECTIONS:
        return getattr(cfg.apparatus, name)
    return getattr(cfg, name)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return lowered in ("true", "yes", "1")
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(t) for t in items)
            return tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    known = {**_APPARATUS_SECTIONS, **_RUN_SECTIONS}
    cfg = RunConfig()
    apparatus_updates = {}
    run_updates = {}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
        current = _section(cfg, name)
        names = {f.name for f in fields(current)}
        values = {}
        for key, raw in parser.items(name):
            if key not in names:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _parse(raw, getattr(current, key), f"{name}.{key}")
        updated = replace(current, **values)
        (apparatus_updates if name in _APPARATUS_SECTIONS else run_updates)[name] = updated
    return replace(cfg, apparatus=replace(cfg.apparatus, **apparatus_updates), **run_updates)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    for name in (*_APPARATUS_SECTIONS, *_RUN_SECTIONS):
        section = _section(cfg, name)
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def derive_seed(master: int, task: str) -> int:
    """Stable 63-bit seed for a named subtask of a run."""
    digest = hashlib.sha256(f"{int(master)}:{task}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    noise = replace(cfg.apparatus.noise, rng_seed=int(seed))
    return replace(cfg, apparatus=replace(cfg.apparatus, noise=noise))


def with_gap(cfg: RunConfig, **changes) -> RunConfig:
    gap = replace(cfg.apparatus.gap, **changes)
    return replace(cfg, apparatus=replace(cfg.apparatus, gap=gap))


# --- derived objects -------------------------------------------------------------


def patch_params(cfg: RunConfig) -> PatchParams:
    p = cfg.patch
    return PatchParams(sigma_L=p.sigma_L, sigma_S=p.sigma_S, lambda_min=p.lambda_min, lambda_max=p.lambda_max)


def build_model(cfg: RunConfig) -> ForceModel:
    plate = cfg.apparatus.plate
    terms = []
    for term in cfg.model.terms:
        if term == "casimir":
            terms.append(Casimir(plate, temperature=cfg.model.temperature))
        elif term == "electrostatic":
            terms.append(Electrostatic(plate, cfg.apparatus.gap.V_eff))
        elif term == "powerlaw":
            terms.append(PowerLaw(cfg.model.powerlaw_C, cfg.model.powerlaw_n))
        elif term == "patch":
            terms.append(Patch(patch_params(cfg), plate.lateral_L))
        else:
            raise ConfigError(f"model.terms: unknown term {term!r}")
    if len(terms) == 1:
        return terms[0]
    return Sum(tuple(terms))


def surface_spec(cfg: RunConfig, seed: int) -> SurfaceSpec:
    s = cfg.surface
    return SurfaceSpec(
        sigma_L=s.sigma_L,
        corr_L=s.corr_L,
        sigma_S=s.sigma_S,
        corr_S=s.corr_S,
        rng_seed=seed,
        extent=(s.extent_x, s.extent_y),
        pitch=s.pitch,
    )


# --- validation ------------------------------------------------------------------


def _positive(section: str, obj, *names) -> list[Violation]:
    out = []
    for name in names:
        v = getattr(obj, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            out.append(Violation(f"{section}.{name}", "must be positive"))
    return out


def validate_run_config(cfg: RunConfig) -> ValidationReport:
    """Apparatus invariants plus the run sections, keyed by ``section.key``."""
    base = validate_config(cfg.apparatus)
    out = list(base.violations)
    warn = list(base.warnings)

    m = cfg.model
    if not m.terms:
        out.append(Violation("model.terms", "at least one force term is required"))
    for t in m.terms:
        if t not in MODEL_TERMS:
            out.append(Violation("model.terms", f"unknown term {t!r}; choose from {', '.join(MODEL_TERMS)}"))
    if "powerlaw" in m.terms:
        if not m.powerlaw_n > 0:
            out.append(Violation("model.powerlaw_n", "exponent must be positive"))
        if not math.isfinite(m.powerlaw_C):
            out.append(Violation("model.powerlaw_C", "coefficient must be finite"))
    out += _positive("model", m, "temperature")

    p = cfg.patch
    if p.sigma_L < 0:
        out.append(Violation("patch.sigma_L", "must be >= 0"))
    if p.sigma_S < 0:
        out.append(Violation("patch.sigma_S", "must be >= 0"))
    if not 0 < p.lambda_min < p.lambda_max:
        out.append(Violation("patch.lambda_min", "need 0 < lambda_min < lambda_max"))

    s = cfg.simulation
    res, gap = cfg.apparatus.resonator, cfg.apparatus.gap
    out += _positive("simulation", s, "duration", "sample_rate")
    if s.sample_rate > 0 and res.freq_r > 0 and gap.freq_s > 0:
        need = NYQUIST_MARGIN * max(gap.freq_s, res.freq_r)
        if s.sample_rate <= need:
            out.append(Violation("simulation.sample_rate", f"must exceed {need:g} Hz"))
    if s.duration > 0 and res.freq_r > 0 and res.quality_Q > 0 and gap.freq_s > 0:
        need = settling_time(res) + MIN_DEMOD_PERIODS / gap.freq_s
        if s.duration < need:
            out.append(Violation("simulation.duration", f"must be >= {need:.4g} s (settling plus {MIN_DEMOD_PERIODS} periods)"))

    c = cfg.calibration
    out += _positive("calibration", c, "bias_span", "integration_time", "reference_distance", "z_max", "stiffness_mismatch")
    for name in ("bias_points", "distance_points"):
        if getattr(c, name) < 1:
            out.append(Violation(f"calibration.{name}", "must be >= 1"))

    sf = cfg.surface
    out += _positive("surface", sf, "extent_x", "extent_y", "pitch", "tip_diameter", "step", "cutoff_lambda")
    spec = surface_spec(cfg, 0)
    for msg in spec.violations():
        out.append(Violation("surface", msg))
    if sf.tip_diameter > min(sf.extent_x, sf.extent_y):
        out.append(Violation("surface.tip_diameter", "tip larger than the map"))
    if sf.step < sf.pitch:
        out.append(Violation("surface.step", "scan step must be >= pitch"))

    sw = cfg.sweep
    if sw.axis not in SWEEP_AXES:
        out.append(Violation("sweep.axis", f"choose from {', '.join(SWEEP_AXES)}"))
    if not sw.grid:
        out.append(Violation("sweep.grid", "grid must not be empty"))
    if sw.workers < 1:
        out.append(Violation("sweep.workers", "must be >= 1"))
    return ValidationReport(tuple(out), tuple(warn))


def sweep_point_config(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "d0":
        return with_gap(cfg, d0=value)
    if axis == "Vg":
        return with_gap(cfg, Vg=value)
    if axis == "nu_s":
        return with_gap(cfg, freq_s=value)
    raise ConfigError(f"unknown sweep axis {axis!r}")


def validate_sweep_grid(cfg: RunConfig, axis: str, grid) -> list[Violation]:
    out = []
    for i, value in enumerate(grid):
        point = sweep_point_config(cfg, axis, float(value))
        for v in validate_run_config(point).violations:
            out.append(Violation(f"sweep.grid[{i}]={value!r}", str(v)))
    return out


def as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
