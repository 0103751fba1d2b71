"""Physical constants, apparatus configuration types and their validation.

Every type here is a frozen dataclass holding SI values. Validation never
raises: :func:`validate_config` collects violated invariants into a
:class:`ValidationReport` so callers (the CLI in particular) can show all of
them at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

SILICON_DENSITY = 2330.0  # kg/m^3

# Modulation depth above which the first-order amplitude formula starts to
# drift by more than ~1e-3; above MAX_MODULATION_RATIO it is rejected.
WARN_MODULATION_RATIO = 0.01
MAX_MODULATION_RATIO = 0.1


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float  # J s
    c: float  # m/s
    eps0: float  # F/m
    kB: float  # J/K


CONSTANTS = PhysicalConstants(
    hbar=1.054571817e-34,
    c=299792458.0,
    eps0=8.8541878128e-12,
    kB=1.380649e-23,
)


def plate_mass(side: float = 1e-2, thickness: float = 50e-6, density: float = SILICON_DENSITY) -> float:
    """Geometric mass of a square plate; the aluminium coating is ignored."""
    return density * side * side * thickness


@dataclass(frozen=True)
class PlateGeometry:
    """Facing area ``area_S`` (m^2) and lateral size ``lateral_L`` (m)."""

    area_S: float = 1e-4
    lateral_L: float = 1e-2


@dataclass(frozen=True)
class ResonatorParams:
    """Fundamental mode of the plate resonator.

    ``mass_m`` defaults to the bare silicon plate (1 cm x 1 cm x 50 um). The
    true modal mass is not known independently; an electrostatic calibration
    (:func:`casimir_twin.calibration.infer_stiffness`) measures the stiffness
    directly and supersedes it.
    """

    mass_m: float = plate_mass()
    freq_r: float = 125.0
    quality_Q: float = 2000.0

    @property
    def omega_r(self) -> float:
        return 2.0 * math.pi * self.freq_r


@dataclass(frozen=True)
class GapState:
    """Mean separation, source modulation and gap voltages.

    The net voltage across the gap is ``Vg + V0``; the defaults counterbias
    the measured contact potential so the gap is at zero net voltage.
    """

    d0: float = 5e-6
    xs0: float = 45e-9
    freq_s: float = 10.0
    Vg: float = -0.2447
    V0: float = 0.2447

    @property
    def V_eff(self) -> float:
        return self.Vg + self.V0


@dataclass(frozen=True)
class ReadoutParams:
    lambda_laser: float = 633e-9
    Vfr: float = 2.3


@dataclass(frozen=True)
class NoiseSpec:
    """White displacement noise referred to the resonator.

    ``asd_displacement`` is the one-sided amplitude spectral density in
    m/sqrt(Hz); ``day_factor`` multiplies it (2.0 reproduces daytime runs).
    """

    asd_displacement: float = 3e-11
    day_factor: float = 1.0
    rng_seed: int = 0

    @property
    def effective_asd(self) -> float:
        return self.asd_displacement * self.day_factor


@dataclass(frozen=True)
class ApparatusConfig:
    plate: PlateGeometry = field(default_factory=PlateGeometry)
    resonator: ResonatorParams = field(default_factory=ResonatorParams)
    gap: GapState = field(default_factory=GapState)
    readout: ReadoutParams = field(default_factory=ReadoutParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)


@dataclass(frozen=True)
class Violation:
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    warnings: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


def stiffness(res: ResonatorParams) -> float:
    """Spring constant m * (2 pi nu_r)^2 in N/m."""
    return res.mass_m * res.omega_r**2


def _finite_positive(value: float) -> bool:
    return math.isfinite(value) and value > 0


def check_plate(plate: PlateGeometry, prefix: str = "plate") -> list[Violation]:
    out = []
    if not _finite_positive(plate.area_S):
        out.append(Violation(f"{prefix}.area_S", "plate area must be positive"))
    if not _finite_positive(plate.lateral_L):
        out.append(Violation(f"{prefix}.lateral_L", "lateral dimension must be positive"))
    if not out and plate.area_S > plate.lateral_L**2:
        out.append(Violation(f"{prefix}.area_S", "plate area cannot exceed lateral_L squared"))
    return out


def check_resonator(res: ResonatorParams, prefix: str = "resonator") -> list[Violation]:
    out = []
    for name, label in (("mass_m", "mass"), ("freq_r", "resonance frequency"), ("quality_Q", "quality factor")):
        if not _finite_positive(getattr(res, name)):
            out.append(Violation(f"{prefix}.{name}", f"{label} must be positive"))
    return out


def check_gap(gap: GapState, prefix: str = "gap") -> tuple[list[Violation], list[Violation]]:
    out: list[Violation] = []
    warn: list[Violation] = []
    if not _finite_positive(gap.d0):
        out.append(Violation(f"{prefix}.d0", "separation must be positive"))
    if not (math.isfinite(gap.xs0) and gap.xs0 >= 0):
        out.append(Violation(f"{prefix}.xs0", "modulation amplitude must be non-negative"))
    elif _finite_positive(gap.d0):
        if gap.xs0 >= gap.d0:
            out.append(Violation(f"{prefix}.xs0", "modulation amplitude must be < separation"))
        elif gap.xs0 / gap.d0 > MAX_MODULATION_RATIO:
            out.append(
                Violation(f"{prefix}.xs0", f"modulation depth xs0/d0 must not exceed {MAX_MODULATION_RATIO}")
            )
        elif gap.xs0 / gap.d0 > WARN_MODULATION_RATIO:
            warn.append(
                Violation(
                    f"{prefix}.xs0",
                    f"modulation depth xs0/d0 = {gap.xs0 / gap.d0:.3g} exceeds {WARN_MODULATION_RATIO}; "
                    "first-order amplitude formula degrades",
                )
            )
    if not _finite_positive(gap.freq_s):
        out.append(Violation(f"{prefix}.freq_s", "modulation frequency must be positive"))
    for name in ("Vg", "V0"):
        if not math.isfinite(getattr(gap, name)):
            out.append(Violation(f"{prefix}.{name}", "voltage must be finite"))
    return out, warn


def check_readout(ro: ReadoutParams, prefix: str = "readout") -> list[Violation]:
    out = []
    if not _finite_positive(ro.lambda_laser):
        out.append(Violation(f"{prefix}.lambda_laser", "laser wavelength must be positive"))
    if not _finite_positive(ro.Vfr):
        out.append(Violation(f"{prefix}.Vfr", "fringe voltage must be positive"))
    return out


def check_noise(noise: NoiseSpec, prefix: str = "noise") -> list[Violation]:
    out = []
    if not (math.isfinite(noise.asd_displacement) and noise.asd_displacement >= 0):
        out.append(Violation(f"{prefix}.asd_displacement", "noise density must be >= 0"))
    if not (math.isfinite(noise.day_factor) and noise.day_factor >= 1):
        out.append(Violation(f"{prefix}.day_factor", "day factor must be >= 1"))
    if not (0 <= int(noise.rng_seed) < 2**64):
        out.append(Violation(f"{prefix}.rng_seed", "seed must fit in 64 unsigned bits"))
    return out


def validate_config(cfg: ApparatusConfig) -> ValidationReport:
    """Collect every violated invariant of ``cfg``; an empty report is valid."""
    violations = check_plate(cfg.plate) + check_resonator(cfg.resonator)
    gap_v, gap_w = check_gap(cfg.gap)
    violations += gap_v
    violations += check_readout(cfg.readout) + check_noise(cfg.noise)
    return ValidationReport(tuple(violations), tuple(gap_w))
