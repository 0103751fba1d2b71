"""Electrostatic calibration: residual bias, absolute distance, stiffness.

Sweeps are synthesised at the phasor level: demodulating white displacement
noise of ASD ``a`` over ``T`` seconds adds complex Gaussian noise with
per-quadrature standard deviation ``a / sqrt(T)`` to the true phasor. This
is statistically identical to running the full time-domain simulation per
point and keeps Monte Carlo studies cheap; ``cmd_simulate`` exercises the
time-domain path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CONSTANTS, GapState, PlateGeometry, ResonatorParams, stiffness
from .dynamics import transfer_gain
from .fitting import FitError, FitProblem, ModelFamily, nlls_fit
from .forces import Casimir, Electrostatic, ForceModel, Sum, force_derivative

MIN_SWEEP_POINTS = 5


class CalibrationError(FitError):
    pass


class SweepFormatError(CalibrationError, ValueError):
    """A sweep file that cannot be parsed at all."""


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise CalibrationError("sweep points must be (x, amplitude, sigma) triples")
    return arr


@dataclass(frozen=True, eq=False)
class BiasSweep:
    """Amplitude vs applied bias Vg at a fixed separation d0."""

    points: np.ndarray
    d0: float

    def __post_init__(self):
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < MIN_SWEEP_POINTS:
            raise CalibrationError(f"too few points: bias sweep needs >= {MIN_SWEEP_POINTS}, got {len(pts)}")
        order = np.argsort(pts[:, 0])
        i_min = int(np.argmin(pts[order, 1]))
        if i_min == 0 or i_min == len(pts) - 1:
            raise CalibrationError("bias sweep must bracket the amplitude minimum")

    @property
    def Vg(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def amplitude(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def sigma(self) -> np.ndarray:
        return self.points[:, 2]


@dataclass(frozen=True, eq=False)
class DistanceSweep:
    """Amplitude vs commanded source displacement at fixed bias."""

    points: np.ndarray
    Vg: float

    def __post_init__(self):
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < MIN_SWEEP_POINTS:
            raise CalibrationError(f"too few points: distance sweep needs >= {MIN_SWEEP_POINTS}, got {len(pts)}")
        dz = np.diff(pts[:, 0])
        if not (np.all(dz > 0) or np.all(dz < 0)):
            raise CalibrationError("z_pzt must be strictly monotone")

    @property
    def z_pzt(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def amplitude(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def sigma(self) -> np.ndarray:
        return self.points[:, 2]


@dataclass
class BiasFit:
    V0: float
    sigma_V0: float
    coefficients: np.ndarray  # amplitude = c2 Vg^2 + c1 Vg + c0
    covariance: np.ndarray
    chi2_reduced: float
    residuals: np.ndarray
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.V0, self.sigma_V0))

    def as_record(self) -> dict:
        rec = {
            "V0_V": self.V0,
            "sigma_V0_V": self.sigma_V0,
            "coefficients": self.coefficients.tolist(),
            "covariance": self.covariance.tolist(),
            "chi2_reduced": self.chi2_reduced,
            "residuals": self.residuals.tolist(),
        }
        rec.update(self.extra)
        return rec


@dataclass
class DistanceFit:
    d_r: float
    sigma_dr: float
    coeff_ratio: float
    A: float
    A_expected: float
    covariance: np.ndarray
    chi2_reduced: float
    residuals: np.ndarray
    converged: bool

    def __iter__(self):
        return iter((self.d_r, self.sigma_dr, self.coeff_ratio))

    def as_record(self) -> dict:
        return {
            "d_r_m": self.d_r,
            "sigma_dr_m": self.sigma_dr,
            "coeff_ratio": self.coeff_ratio,
            "A_m4": self.A,
            "A_expected_m4": self.A_expected,
            "covariance": self.covariance.tolist(),
            "chi2_reduced": self.chi2_reduced,
            "residuals": self.residuals.tolist(),
            "converged": self.converged,
        }


def fit_residual_bias(sweep: BiasSweep) -> BiasFit:
    """Weighted parabola fit of amplitude vs Vg; V0 is minus the vertex.

    Points with zero sigma all get unit weight and the covariance is then
    scaled by the residual variance.
    """
    Vg, a, s = sweep.Vg, sweep.amplitude, sweep.sigma
    absolute = bool(np.all(s > 0))
    w = 1.0 / s if absolute else np.ones_like(a)
    X = np.column_stack([Vg**2, Vg, np.ones_like(Vg)])
    Xw = X * w[:, None]
    coef, *_ = np.linalg.lstsq(Xw, a * w, rcond=None)
    c2, c1, _ = coef
    if not c2 > 0:
        raise CalibrationError("no amplitude minimum in range (fitted parabola is not convex)")
    resid = X @ coef - a
    dof = len(a) - 3
    chi2 = float(np.sum((resid * w) ** 2) / dof) if dof > 0 else 0.0
    cov = np.linalg.inv(Xw.T @ Xw)
    if not absolute:
        cov = cov * chi2
    V0 = c1 / (2 * c2)
    grad = np.array([-c1 / (2 * c2**2), 1 / (2 * c2), 0.0])
    sigma_V0 = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    return BiasFit(float(V0), sigma_V0, coef, cov, chi2, resid)


def _inverse_cube_family() -> ModelFamily:
    def f(p, z):
        return p[0] / (p[1] + z) ** 3

    def jac(p, z):
        g = p[1] + z
        return np.column_stack([1 / g**3, -3 * p[0] / g**4])

    return ModelFamily("inverse_cube", ("A", "d_r"), f, jac)


def expected_inverse_cube_coefficient(stiffness_value: float, xs0: float, V_eff: float, S: float) -> float:
    """eps0 S V^2 xs0 / k, the 1/d^3 amplitude coefficient (m^4)."""
    return CONSTANTS.eps0 * S * V_eff**2 * xs0 / stiffness_value


def fit_reference_distance(sweep: DistanceSweep, stiffness: float, xs0: float, V_eff: float, S: float) -> DistanceFit:
    """Fit amplitude = A / (d_r + z)^3 and compare A with its electrostatic value."""
    if V_eff == 0:
        raise CalibrationError("effective bias must be non-zero for a 1/d^3 calibration")
    z, a, s = sweep.z_pzt, sweep.amplitude, sweep.sigma
    if np.any(a <= 0):
        raise CalibrationError("distance sweep amplitudes must be positive")
    # a^(-1/3) is linear in z: (d_r + z) / A^(1/3)
    slope, intercept = np.polyfit(z, a ** (-1.0 / 3.0), 1)
    if not slope > 0:
        raise CalibrationError("amplitude does not fall with distance")
    start = np.array([slope**-3, intercept / slope])
    z_min = float(np.min(z))
    # keep the closest gap strictly positive
    bounds = [(0.0, math.inf), (-z_min + 1e-12, math.inf)]
    start[1] = max(start[1], -z_min + 1e-9)
    res = nlls_fit(FitProblem(z, a, s, _inverse_cube_family(), start, bounds))
    A, d_r = res.params
    if not res.converged:
        raise CalibrationError(f"distance fit did not converge: {res.message}")
    if d_r <= -z_min:
        raise CalibrationError("fitted reference distance implies contact")
    A_exp = expected_inverse_cube_coefficient(stiffness, xs0, V_eff, S)
    return DistanceFit(
        d_r=float(d_r),
        sigma_dr=float(res.errors[1]),
        coeff_ratio=float(A / A_exp),
        A=float(A),
        A_expected=float(A_exp),
        covariance=res.covariance,
        chi2_reduced=float(res.chi2_reduced),
        residuals=res.residuals,
        converged=res.converged,
    )


def infer_stiffness(A_V: float, V_eff: float, d0: float, xs0: float, S: float) -> float:
    """Effective spring constant from a fixed-bias amplitude (N/m)."""
    if A_V == 0:
        raise CalibrationError("amplitude must be non-zero")
    if not (A_V > 0 and d0 > 0 and xs0 > 0 and S > 0 and V_eff != 0):
        raise CalibrationError("inputs must be positive")
    return CONSTANTS.eps0 * S * V_eff**2 * xs0 / (A_V * d0**3)


# --- synthesis ----------------------------------------------------------------


def phasor_noise_sigma(asd: float, integration_time: float) -> float:
    """Per-quadrature std of a demodulated phasor (same unit as the ASD numerator)."""
    return asd / math.sqrt(integration_time)


def _measure(true_amplitude: np.ndarray, noise_sigma: float, rng: np.random.Generator | None):
    """|true + complex noise| and the per-point sigma reported by demodulation."""
    true_amplitude = np.asarray(true_amplitude, dtype=float)
    if noise_sigma == 0 or rng is None:
        return np.abs(true_amplitude), np.zeros_like(true_amplitude)
    noise = rng.normal(0.0, noise_sigma, size=(2, true_amplitude.size))
    measured = np.hypot(true_amplitude + noise[0], noise[1])
    return measured, np.full_like(true_amplitude, noise_sigma)


def signal_amplitude(model: ForceModel, gap: GapState, res: ResonatorParams, k_eff: float | None = None) -> float:
    """Signed in-phase amplitude at nu_s including the resonator's dynamic gain."""
    k = stiffness(res) if k_eff is None else k_eff
    return force_derivative(model, gap.d0) * gap.xs0 / k * abs(transfer_gain(res, gap.freq_s))


def synthesize_bias_sweep(
    Vg,
    plate: PlateGeometry,
    gap: GapState,
    res: ResonatorParams,
    asd: float = 0.0,
    integration_time: float = 100.0,
    seed: int | None = None,
    include_casimir: bool = True,
    k_eff: float | None = None,
) -> BiasSweep:
    """Amplitudes at each bias ``Vg`` with net gap voltage ``Vg + gap.V0``."""
    Vg = np.asarray(Vg, dtype=float)
    rng = np.random.default_rng(seed) if seed is not None else None
    true = []
    for v in Vg:
        terms = [Electrostatic(plate, v + gap.V0)]
        if include_casimir:
            terms.append(Casimir(plate))
        true.append(signal_amplitude(Sum(tuple(terms)), gap, res, k_eff))
    amp, sig = _measure(np.array(true), phasor_noise_sigma(asd, integration_time), rng)
    return BiasSweep(np.column_stack([Vg, amp, sig]), gap.d0)


def synthesize_distance_sweep(
    z_pzt,
    d_r: float,
    V_eff: float,
    plate: PlateGeometry,
    gap: GapState,
    res: ResonatorParams,
    asd: float = 0.0,
    integration_time: float = 100.0,
    seed: int | None = None,
    k_eff: float | None = None,
    include_casimir: bool = False,
) -> DistanceSweep:
    """Amplitudes at separations ``d_r + z_pzt``; ``k_eff`` lets the truth differ from the nominal stiffness."""
    z = np.asarray(z_pzt, dtype=float)
    rng = np.random.default_rng(seed) if seed is not None else None
    k = stiffness(res) if k_eff is None else k_eff
    terms = [Electrostatic(plate, V_eff)]
    if include_casimir:
        terms.append(Casimir(plate))
    model = Sum(tuple(terms))
    # the 1/d^3 calibration is quasi-static: no dynamic gain, matching its expected coefficient
    true = force_derivative(model, d_r + z) * gap.xs0 / k
    amp, sig = _measure(true, phasor_noise_sigma(asd, integration_time), rng)
    return DistanceSweep(np.column_stack([z, amp, sig]), gap.Vg)


def casimir_floor(plate: PlateGeometry, gap: GapState, res: ResonatorParams) -> float:
    """Casimir amplitude at d0: the floor below which a bias sweep cannot resolve V0."""
    return abs(signal_amplitude(Casimir(plate), gap, res))


def residual_bias_vs_distance(sweeps: list[BiasSweep]) -> dict:
    """Per-distance V0 and the chi-square of a constant-V0 hypothesis."""
    fits = [fit_residual_bias(s) for s in sweeps]
    V0 = np.array([f.V0 for f in fits])
    sig = np.array([f.sigma_V0 for f in fits])
    w = 1.0 / np.where(sig > 0, sig, 1.0) ** 2
    mean = float(np.sum(w * V0) / np.sum(w))
    chi2 = float(np.sum(w * (V0 - mean) ** 2) / max(len(V0) - 1, 1))
    return {
        "d0_m": [s.d0 for s in sweeps],
        "V0_V": V0.tolist(),
        "sigma_V0_V": sig.tolist(),
        "weighted_mean_V0_V": mean,
        "chi2_reduced_constant": chi2,
    }


# --- CSV ---------------------------------------------------------------------

BIAS_COLUMNS = ["Vg_V", "amplitude_m", "sigma_m"]
DISTANCE_COLUMNS = ["z_pzt_m", "amplitude_m", "sigma_m"]


def write_sweep_csv(sweep: BiasSweep | DistanceSweep, path) -> Path:
    path = Path(path)
    if isinstance(sweep, BiasSweep):
        meta, cols = f"# kind=bias,d0_m={sweep.d0!r}", BIAS_COLUMNS
    else:
        meta, cols = f"# kind=distance,Vg_V={sweep.Vg!r}", DISTANCE_COLUMNS
    with path.open("w", newline="") as fh:
        fh.write(meta + "\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for row in sweep.points:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_sweep_csv(path) -> BiasSweep | DistanceSweep:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise SweepFormatError(f"{path}: missing '# kind=...' header")
        try:
            meta = dict(item.split("=", 1) for item in first[1:].strip().split(","))
        except ValueError:
            raise SweepFormatError(f"{path}: bad header line {first!r}") from None
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise SweepFormatError(f"{path}: empty sweep file")
    header, body = rows[0], rows[1:]
    try:
        pts = np.array([[float(v) for v in r] for r in body]) if body else np.empty((0, 3))
        kind = meta.get("kind")
        if kind == "bias":
            if header != BIAS_COLUMNS:
                raise SweepFormatError(f"{path}: expected columns {BIAS_COLUMNS}")
            anchor = float(meta["d0_m"])
        elif kind == "distance":
            if header != DISTANCE_COLUMNS:
                raise SweepFormatError(f"{path}: expected columns {DISTANCE_COLUMNS}")
            anchor = float(meta["Vg_V"])
        else:
            raise SweepFormatError(f"{path}: unknown sweep kind {kind!r}")
    except (KeyError, ValueError) as exc:
        if isinstance(exc, SweepFormatError):
            raise
        raise SweepFormatError(f"{path}: cannot parse sweep ({exc})") from None
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SweepFormatError(f"{path}: every row needs 3 values")
    # sweep invariants (too few points, bracketing, ordering) stay CalibrationError
    return BiasSweep(pts, anchor) if kind == "bias" else DistanceSweep(pts, anchor)
