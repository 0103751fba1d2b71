"""Force laws between the plates and their derivatives with respect to the gap.

Sign convention: a positive gap ``d`` grows away from contact, so attractive
forces are negative and their derivatives ``dF/dd`` are positive.

The patch-potential force contains the integral of k^3 / sinh^2(k d) over the
crystallite wavenumber band. It is evaluated on the scale-free variable
u = k d so the quadrature does not depend on the separation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate

from .core import CONSTANTS, PlateGeometry

DEFAULT_LAMBDA_MAX = 100e-6
QUAD_RTOL = 1e-8

CorrectionFn = Callable[[float, float], float]


class ForceDomainError(ValueError):
    """Raised for non-positive separations or malformed force parameters."""


@dataclass(frozen=True)
class PatchParams:
    """Two-scale patch potential: rms voltages and crystallite size band."""

    sigma_L: float = 0.0516
    sigma_S: float = 0.0913
    lambda_min: float = 3e-6
    lambda_max: float = DEFAULT_LAMBDA_MAX

    def __post_init__(self):
        if not (self.sigma_L >= 0 and self.sigma_S >= 0):
            raise ForceDomainError("patch rms voltages must be >= 0")
        if not (0 < self.lambda_min < self.lambda_max):
            raise ForceDomainError("need 0 < lambda_min < lambda_max")

    @property
    def k_max(self) -> float:
        return 2.0 * math.pi / self.lambda_min

    @property
    def k_min(self) -> float:
        return 2.0 * math.pi / self.lambda_max


@dataclass(frozen=True)
class Casimir:
    """Ideal plane-parallel Casimir force.

    ``correction(d, T)`` multiplies the ideal force; leave it as None for the
    ideal law. Finite-temperature theories plug in here.
    """

    plate: PlateGeometry
    correction: CorrectionFn | None = None
    temperature: float = 300.0

    @property
    def coefficient(self) -> float:
        c = CONSTANTS
        return math.pi**2 * c.hbar * c.c * self.plate.area_S / 240.0


@dataclass(frozen=True)
class Electrostatic:
    plate: PlateGeometry
    V: float

    @property
    def coefficient(self) -> float:
        return 0.5 * CONSTANTS.eps0 * self.plate.area_S * self.V**2


@dataclass(frozen=True)
class PowerLaw:
    """Attractive force of magnitude C / d**n."""

    C: float
    n: float

    def __post_init__(self):
        if not math.isfinite(self.C):
            raise ForceDomainError("power-law coefficient must be finite")
        if not self.n > 0:
            raise ForceDomainError("power-law exponent must be positive")


@dataclass(frozen=True)
class Patch:
    patch: PatchParams
    lateral_L: float


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ForceDomainError("a force sum needs at least one term")


ForceModel = Union[Casimir, Electrostatic, PowerLaw, Patch, Sum]


def as_power_law(model: Casimir | Electrostatic | PowerLaw) -> PowerLaw:
    """Express the ideal Casimir and electrostatic laws as C / d**n."""
    if isinstance(model, PowerLaw):
        return model
    if isinstance(model, Casimir):
        return PowerLaw(model.coefficient, 4)
    if isinstance(model, Electrostatic):
        return PowerLaw(model.coefficient, 2)
    raise TypeError(f"{type(model).__name__} is not a power law")


def is_power_law(model: ForceModel) -> bool:
    if isinstance(model, Casimir):
        return model.correction is None
    return isinstance(model, (Electrostatic, PowerLaw))


# --- sinh kernel -----------------------------------------------------------


def _kernel(u: float) -> float:
    """u^3 / sinh^2(u), written to avoid overflow at large u."""
    if u <= 0.0:
        return 0.0
    e = math.exp(-2.0 * u)
    return 4.0 * u**3 * e / math.expm1(-2.0 * u) ** 2


def derivative_kernel(u: float) -> float:
    """u^4 cosh(u) / sinh^3(u), the u-derivative companion of the kernel."""
    if u <= 0.0:
        return 0.0
    e = math.exp(-2.0 * u)
    return -4.0 * u**4 * (1.0 + e) * e / math.expm1(-2.0 * u) ** 3


def _band(k_min: float, k_max: float, d: float) -> tuple[float, float]:
    if not d > 0:
        raise ForceDomainError(f"separation must be positive, got {d!r}")
    if not (0 <= k_min <= k_max):
        raise ForceDomainError(f"need 0 <= k_min <= k_max, got [{k_min!r}, {k_max!r}]")
    return k_min * d, k_max * d


def _quad(fn, a: float, b: float, rtol: float) -> float:
    if a == b:
        return 0.0
    value, _ = integrate.quad(fn, a, b, epsabs=0.0, epsrel=rtol, limit=200)
    return value


def sinh_kernel_integral(k_min: float, k_max: float, d: float, rtol: float = QUAD_RTOL) -> float:
    """Integral of k^3 / sinh^2(k d) dk over [k_min, k_max] (units m^-4).

    ``k_max`` may be ``math.inf``.
    """
    a, b = _band(k_min, k_max, d)
    return _quad(_kernel, a, b, rtol) / d**4


def sinh_kernel_derivative_integral(k_min: float, k_max: float, d: float, rtol: float = QUAD_RTOL) -> float:
    """Integral of k^4 cosh(k d) / sinh^3(k d) dk over [k_min, k_max].

    d/dd of :func:`sinh_kernel_integral` equals -2 times this value
    (differentiation under the integral sign).
    """
    a, b = _band(k_min, k_max, d)
    return _quad(derivative_kernel, a, b, rtol) / d**5


def thermal_wavelength(T: float) -> float:
    """hbar c / (k_B T) in metres."""
    if not T > 0:
        raise ForceDomainError(f"temperature must be positive, got {T!r}")
    return CONSTANTS.hbar * CONSTANTS.c / (CONSTANTS.kB * T)


# --- patch force -----------------------------------------------------------


def _patch_band_weight(p: PatchParams) -> float:
    return 2.0 * p.sigma_S**2 / (p.k_max**2 - p.k_min**2)


def patch_force_magnitude(p: PatchParams, L: float, d: float) -> float:
    eps0 = CONSTANTS.eps0
    long_range = p.sigma_L**2 / (2.0 * d**2)
    short_range = 0.0
    if p.sigma_S > 0:
        short_range = _patch_band_weight(p) * sinh_kernel_integral(p.k_min, p.k_max, d)
    return eps0 * L**2 * (long_range + short_range)


def patch_derivative_magnitude(p: PatchParams, L: float, d: float) -> float:
    """|dF/dd| of the patch force."""
    eps0 = CONSTANTS.eps0
    long_range = p.sigma_L**2 / d**3
    short_range = 0.0
    if p.sigma_S > 0:
        short_range = 2.0 * _patch_band_weight(p) * sinh_kernel_derivative_integral(p.k_min, p.k_max, d)
    return eps0 * L**2 * (long_range + short_range)


# --- dispatch ----------------------------------------------------------------


def _check_gap(d) -> np.ndarray:
    arr = np.asarray(d, dtype=float)
    if not np.all(arr > 0):
        raise ForceDomainError("separation must be positive")
    return arr


def _scalar_or_array(values: np.ndarray, like):
    return float(values) if np.ndim(like) == 0 else values


def _casimir_correction(model: Casimir, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correction factor and its d-derivative (central difference)."""
    fn = np.vectorize(lambda x: float(model.correction(x, model.temperature)))
    h = d * 1e-6
    eta = fn(d)
    deta = (fn(d + h) - fn(d - h)) / (2 * h)
    return eta, deta


def _force(model: ForceModel, d: np.ndarray) -> np.ndarray:
    if isinstance(model, Sum):
        return sum((_force(m, d) for m in model.terms), np.zeros_like(d))
    if isinstance(model, Patch):
        fn = np.vectorize(lambda x: patch_force_magnitude(model.patch, model.lateral_L, x))
        return -fn(d)
    law = as_power_law(model)
    f = -law.C / d**law.n
    if isinstance(model, Casimir) and model.correction is not None:
        f = f * _casimir_correction(model, d)[0]
    return f


def _derivative(model: ForceModel, d: np.ndarray) -> np.ndarray:
    if isinstance(model, Sum):
        return sum((_derivative(m, d) for m in model.terms), np.zeros_like(d))
    if isinstance(model, Patch):
        fn = np.vectorize(lambda x: patch_derivative_magnitude(model.patch, model.lateral_L, x))
        return fn(d)
    law = as_power_law(model)
    g = law.n * law.C / d ** (law.n + 1)
    if isinstance(model, Casimir) and model.correction is not None:
        eta, deta = _casimir_correction(model, d)
        g = g * eta - law.C / d**law.n * deta
    return g


def force(model: ForceModel, d):
    """Signed force (N) at separation ``d``; accepts scalars or arrays."""
    arr = _check_gap(d)
    return _scalar_or_array(_force(model, arr), d)


def force_derivative(model: ForceModel, d):
    """dF/dd (N/m) at separation ``d``; positive for attractive, decaying laws."""
    arr = _check_gap(d)
    return _scalar_or_array(_derivative(model, arr), d)
