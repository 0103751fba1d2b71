"""Resonator response to a distance-modulated force.

The equation of motion is that of a damped oscillator driven by the force at
the instantaneous gap d0 + xs0 cos(w_s t)::

    m x'' = -m w_r^2 x - (m w_r / Q) x' + F(d0 + xs0 cos(w_s t))

The force is evaluated at the exact gap (no Taylor truncation), so the
first-order amplitude formula in :func:`analytic_amplitude` is something the
simulation can check rather than assume. The resonator's own motion does not
feed back into the gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev
from scipy import signal

from .core import GapState, ResonatorParams, stiffness
from .forces import ForceModel, Patch, Sum, force, force_derivative
from .readout import TimeSeries

# Settling time in units of the amplitude decay time 2Q/w_r.
SETTLE_DECAY_TIMES = 5.0
# Largest w_r * h used by the integrator.
MAX_PHASE_STEP = 0.05
NYQUIST_MARGIN = 20.0


class IntegrationError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class DriveSpec:
    gap: GapState
    model: ForceModel
    duration: float
    sample_rate: float

    def __post_init__(self):
        if not self.duration > 0:
            raise PreconditionError("duration must be positive")
        if not self.sample_rate > 0:
            raise PreconditionError("sample_rate must be positive")


def decay_time(res: ResonatorParams) -> float:
    """Amplitude decay time 2Q / w_r."""
    return 2.0 * res.quality_Q / res.omega_r


def settling_time(res: ResonatorParams) -> float:
    return SETTLE_DECAY_TIMES * decay_time(res)


def gap_at(gap: GapState, t):
    return gap.d0 + gap.xs0 * np.cos(2.0 * math.pi * gap.freq_s * np.asarray(t, dtype=float))


def _needs_interpolation(model: ForceModel) -> bool:
    if isinstance(model, Patch):
        return True
    if isinstance(model, Sum):
        return any(_needs_interpolation(m) for m in model.terms)
    return False


def _force_on_gap(model: ForceModel, gap: GapState):
    """Vectorised F(d) over the gap range swept by the source.

    Quadrature-backed models are replaced by a Chebyshev interpolant on
    [d0 - xs0, d0 + xs0], accurate to rounding for these smooth laws.
    """
    if not _needs_interpolation(model) or gap.xs0 == 0:
        return lambda d: force(model, d)
    lo, hi = gap.d0 - gap.xs0, gap.d0 + gap.xs0
    interp = chebyshev.Chebyshev.interpolate(lambda d: force(model, d), 48, domain=[lo, hi])
    return lambda d: interp(np.clip(d, lo, hi))


def modulated_force(model: ForceModel, gap: GapState, t):
    """Force at the exact instantaneous gap d0 + xs0 cos(2 pi nu_s t)."""
    return force(model, gap_at(gap, t))


def transfer_gain(res: ResonatorParams, freq: float) -> complex:
    """Complex displacement response relative to the static response."""
    if freq < 0:
        raise PreconditionError("frequency must be non-negative")
    wr = res.omega_r
    w = 2.0 * math.pi * freq
    return wr**2 / (wr**2 - w**2 + 1j * w * wr / res.quality_Q)


def analytic_amplitude(model: ForceModel, gap: GapState, res: ResonatorParams) -> float:
    """Quasi-static first-order amplitude |dF/dd|(d0) * xs0 / (m w_r^2)."""
    if gap.freq_s >= res.freq_r:
        raise PreconditionError(
            "quasi-static amplitude needs freq_s < freq_r; multiply by transfer_gain for dynamic response"
        )
    return abs(force_derivative(model, gap.d0)) * gap.xs0 / stiffness(res)


def rk4_matrices(res: ResonatorParams, h: float):
    """One RK4 step of y' = A y + g(t) for y = (x, v), g = (0, F/m).

    Returns (R, P0, Ph, P1) with
    y[n+1] = R y[n] + h/6 (P0 g(t) + Ph g(t + h/2) + P1 g(t + h)).
    """
    wr = res.omega_r
    A = np.array([[0.0, 1.0], [-(wr**2), -wr / res.quality_Q]])
    M = h * A
    I = np.eye(2)
    M2 = M @ M
    M3 = M2 @ M
    R = I + M + M2 / 2 + M3 / 6 + M3 @ M / 24
    P0 = I + M + M2 / 2 + M3 / 4
    Ph = 4 * I + 2 * M + M2 / 2
    return R, P0, Ph, I


def _substeps(res: ResonatorParams, sample_rate: float) -> int:
    return max(1, math.ceil(res.omega_r / (sample_rate * MAX_PHASE_STEP)))


def integrate_motion(
    drive: DriveSpec,
    res: ResonatorParams,
    x0: float | None = None,
    v0: float = 0.0,
    substeps: int | None = None,
) -> TimeSeries:
    """Integrate the driven, damped oscillator with fixed-step RK4.

    ``x0=None`` starts at rest in static equilibrium with the initial force,
    which keeps the start-up transient small. The output is sampled at
    ``drive.sample_rate``; internally each sample interval is divided into
    ``substeps`` RK4 steps (chosen so that w_r h <= 0.05 unless given).

    Because the force does not depend on x, each RK4 step is an affine map
    y -> R y + u_n with u_n built from force samples. The recurrence is run
    on the eigenbasis of R with :func:`scipy.signal.lfilter`; this is the same
    arithmetic as a step-by-step RK4 loop.
    """
    gap = drive.gap
    if drive.sample_rate <= NYQUIST_MARGIN * max(gap.freq_s, res.freq_r):
        raise PreconditionError(
            f"sample_rate must exceed {NYQUIST_MARGIN:g} x max(freq_s, freq_r) = "
            f"{NYQUIST_MARGIN * max(gap.freq_s, res.freq_r):g} Hz"
        )
    k = substeps if substeps is not None else _substeps(res, drive.sample_rate)
    if k < 1:
        raise PreconditionError("substeps must be >= 1")
    h = 1.0 / (drive.sample_rate * k)
    n_out = int(round(drive.duration * drive.sample_rate)) + 1
    n_steps = (n_out - 1) * k

    R, P0, Ph, P1 = rk4_matrices(res, h)
    eig, V = np.linalg.eig(R)
    if np.max(np.abs(eig)) >= 1.0:
        raise IntegrationError(f"RK4 step unstable (|eig| = {np.max(np.abs(eig)):.6g}); reduce the step size")

    fgap = _force_on_gap(drive.model, gap)
    t_half = np.arange(2 * n_steps + 1) * (h / 2)
    F = np.asarray(fgap(gap_at(gap, t_half)), dtype=float) / res.mass_m
    g0, gh, g1 = F[0:-1:2], F[1::2], F[2::2]
    # forcing only enters the velocity component: columns [:, 1] of the P's
    u = (h / 6) * (np.outer(P0[:, 1], g0) + np.outer(Ph[:, 1], gh) + np.outer(P1[:, 1], g1))

    if x0 is None:
        x0 = float(F[0] / res.omega_r**2)
    y0 = np.array([x0, v0], dtype=float)

    Vinv = np.linalg.inv(V)
    z0 = Vinv @ y0
    w = Vinv @ u
    x = np.empty(n_steps + 1)
    x[0] = x0
    z = np.empty((2, n_steps), dtype=complex)
    for i in range(2):
        zi, _ = signal.lfilter([1.0], [1.0, -eig[i]], w[i], zi=[eig[i] * z0[i]])
        z[i] = zi
    x[1:] = (V[0] @ z).real
    samples = x[::k]
    if not np.all(np.isfinite(samples)):
        raise IntegrationError("integration produced non-finite values")
    return TimeSeries(samples, drive.sample_rate, "m")


def rk4_reference(drive: DriveSpec, res: ResonatorParams, x0: float = 0.0, v0: float = 0.0, substeps: int = 1):
    """Plain step-by-step RK4, kept as a slow cross-check of integrate_motion."""
    gap = drive.gap
    h = 1.0 / (drive.sample_rate * substeps)
    n_out = int(round(drive.duration * drive.sample_rate)) + 1
    wr, m, Q = res.omega_r, res.mass_m, res.quality_Q

    def accel(t, x, v):
        return -(wr**2) * x - wr / Q * v + float(modulated_force(drive.model, gap, t)) / m

    x, v, t = x0, v0, 0.0
    out = [x]
    for _ in range(n_out - 1):
        for _ in range(substeps):
            k1x, k1v = v, accel(t, x, v)
            k2x, k2v = v + h / 2 * k1v, accel(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v)
            k3x, k3v = v + h / 2 * k2v, accel(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v)
            k4x, k4v = v + h * k3v, accel(t + h, x + h * k3x, v + h * k3v)
            x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
            t += h
        out.append(x)
    return TimeSeries(np.array(out), drive.sample_rate, "m")
