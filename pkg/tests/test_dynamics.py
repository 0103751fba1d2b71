import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg
from scipy import signal as sps

from casimir_twin.core import CONSTANTS, GapState, PlateGeometry, ResonatorParams, stiffness
from casimir_twin.dynamics import (
    DriveSpec,
    PreconditionError,
    analytic_amplitude,
    decay_time,
    integrate_motion,
    modulated_force,
    rk4_matrices,
    rk4_reference,
    settling_time,
    transfer_gain,
)
from casimir_twin.forces import Casimir, Electrostatic, Patch, PatchParams, PowerLaw, force_derivative
from casimir_twin.readout import demodulate

RES = ResonatorParams()
PLATE = PlateGeometry()


def steady_phasor(x, freq):
    return demodulate(x, freq, settling_time(RES))


def test_settling_time_value():
    assert decay_time(RES) == pytest.approx(2 * 2000 / (2 * math.pi * 125))
    assert settling_time(RES) == pytest.approx(5 * decay_time(RES))


# --- transfer gain and analytic amplitude --------------------------------------------


def test_transfer_gain_points():
    assert transfer_gain(RES, 0.0) == 1.0
    assert abs(transfer_gain(RES, 125.0)) == pytest.approx(2000.0, rel=1e-12)
    assert abs(transfer_gain(RES, 10.0)) == pytest.approx(1.0064, abs=5e-5)


def test_analytic_amplitude_electrostatic():
    gap = GapState()
    amp = analytic_amplitude(Electrostatic(PLATE, 0.1), gap, RES)
    hand = CONSTANTS.eps0 * 1e-4 * 0.1**2 / (5e-6) ** 3 * 45e-9 / stiffness(RES)
    assert amp == pytest.approx(hand, rel=1e-14)
    assert amp == pytest.approx(4.4e-10, rel=0.01)


def test_analytic_amplitude_casimir():
    amp = analytic_amplitude(Casimir(PLATE), GapState(), RES)
    assert amp == pytest.approx(1.0e-12, rel=0.05)


def test_analytic_amplitude_no_modulation():
    assert analytic_amplitude(Casimir(PLATE), GapState(xs0=0.0), RES) == 0.0


def test_analytic_amplitude_rejects_fast_source():
    with pytest.raises(PreconditionError):
        analytic_amplitude(Casimir(PLATE), GapState(freq_s=130.0), RES)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(1e-6, 1e-3),  # S
    st.floats(1e-6, 1e-3),  # m
    st.floats(20.0, 2000.0),  # nu_r
    st.floats(1e-9, 1e-7),  # xs0
    st.floats(1e-6, 2e-5),  # d0
    st.floats(1e-3, 1.0),  # V
)
def test_casimir_electrostatic_quotient(S, m, nu_r, xs0, d0, V):
    plate = PlateGeometry(area_S=S, lateral_L=1.0)
    res = ResonatorParams(mass_m=m, freq_r=nu_r)
    gap = GapState(d0=d0, xs0=xs0, freq_s=min(10.0, nu_r / 2))
    ratio = analytic_amplitude(Casimir(plate), gap, res) / analytic_amplitude(Electrostatic(plate, V), gap, res)
    expected = math.pi**2 * CONSTANTS.hbar * CONSTANTS.c / (60 * CONSTANTS.eps0 * V**2 * d0**2)
    assert ratio == pytest.approx(expected, rel=1e-12)


# --- modulated force ----------------------------------------------------------------------


def test_modulated_force_no_modulation_is_constant():
    gap = GapState(xs0=0.0)
    f = modulated_force(Casimir(PLATE), gap, np.linspace(0, 1, 50))
    assert np.all(f == f[0])


def test_modulated_force_at_zero_time():
    law = PowerLaw(2e-24, 3)
    gap = GapState()
    assert modulated_force(law, gap, 0.0) == pytest.approx(-2e-24 / (gap.d0 + gap.xs0) ** 3, rel=1e-15)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_first_fourier_coefficient_matches_first_order(n):
    C = 1e-20
    gap = GapState(d0=5e-6, xs0=50e-9)
    t = np.arange(4096) / (4096 * gap.freq_s)
    f = modulated_force(PowerLaw(C, n), gap, t)
    coeff = 2 * np.mean(f * np.cos(2 * np.pi * gap.freq_s * t))
    first_order = n * C * gap.xs0 / gap.d0 ** (n + 1)
    assert coeff == pytest.approx(first_order, rel=(gap.xs0 / gap.d0) ** 2 * n * n)
    assert abs(coeff / first_order - 1) < 0.01


# --- integration ------------------------------------------------------------------------------


def test_rk4_matrices_match_exponential():
    h = 1e-4
    R, *_ = rk4_matrices(RES, h)
    A = np.array([[0, 1], [-RES.omega_r**2, -RES.omega_r / RES.quality_Q]])
    # RK4 agrees with exp(hA) up to the fifth-order term; velocity rescaled by w_r
    D = np.diag([1.0, 1.0 / RES.omega_r])
    err = D @ (R - linalg.expm(h * A)) @ np.linalg.inv(D)
    assert np.max(np.abs(err)) < (RES.omega_r * h) ** 5
    assert np.max(np.abs(np.linalg.eigvals(R))) < 1


def test_zero_force_at_rest_stays_put():
    x = integrate_motion(DriveSpec(GapState(), Electrostatic(PLATE, 0.0), 2.0, 4000.0), RES)
    assert np.all(x.samples == 0.0)


def test_constant_force_static_offset():
    law = PowerLaw(1e-22, 4)
    gap = GapState(xs0=0.0)
    F0 = -1e-22 / gap.d0**4
    x = integrate_motion(DriveSpec(gap, law, 60.0, 4000.0), RES, x0=0.0)
    assert x.samples[-1] == pytest.approx(F0 / stiffness(RES), rel=1e-4)
    # starting in equilibrium leaves nothing to settle
    x_eq = integrate_motion(DriveSpec(gap, law, 2.0, 4000.0), RES)
    assert np.allclose(x_eq.samples, F0 / stiffness(RES), rtol=1e-10, atol=0)


def test_matches_step_by_step_rk4():
    drive = DriveSpec(GapState(xs0=200e-9), PowerLaw(3e-21, 3), 0.5, 4000.0)
    fast = integrate_motion(drive, RES, x0=1e-10, v0=0.0, substeps=4)
    slow = rk4_reference(drive, RES, x0=1e-10, v0=0.0, substeps=4)
    scale = np.max(np.abs(slow.samples))
    assert np.max(np.abs(fast.samples - slow.samples)) < 1e-11 * scale


def test_sample_rate_precondition():
    with pytest.raises(PreconditionError):
        integrate_motion(DriveSpec(GapState(), Casimir(PLATE), 1.0, 2000.0), RES)
    with pytest.raises(PreconditionError):
        DriveSpec(GapState(), Casimir(PLATE), 0.0, 4000.0)


def test_casimir_steady_state_amplitude():
    gap = GapState()
    x = integrate_motion(DriveSpec(gap, Casimir(PLATE), 40.0, 4000.0), RES)
    expected = analytic_amplitude(Casimir(PLATE), gap, RES) * abs(transfer_gain(RES, gap.freq_s))
    assert steady_phasor(x, gap.freq_s).amplitude == pytest.approx(expected, rel=0.01)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("freq_s", [7.0, 14.0])
def test_time_and_frequency_domain_agree(n, freq_s):
    gap = GapState(d0=5e-6, xs0=0.02 * 5e-6, freq_s=freq_s)
    law = PowerLaw(1e-9 * gap.d0 ** (n + 1), n)
    x = integrate_motion(DriveSpec(gap, law, 40.0, 4000.0), RES)
    expected = analytic_amplitude(law, gap, RES) * abs(transfer_gain(RES, freq_s))
    assert steady_phasor(x, freq_s).amplitude == pytest.approx(expected, rel=0.01)


@pytest.mark.parametrize("n", [2, 4])
def test_second_harmonic_ratio(n):
    gap = GapState(d0=5e-6, xs0=0.02 * 5e-6, freq_s=10.0)
    law = PowerLaw(1e-9 * gap.d0 ** (n + 1), n)
    x = integrate_motion(DriveSpec(gap, law, 40.0, 4000.0), RES)
    first = steady_phasor(x, gap.freq_s).amplitude
    second = steady_phasor(x, 2 * gap.freq_s).amplitude
    assert second / first == pytest.approx((n + 1) * gap.xs0 / (4 * gap.d0), rel=0.10)


def test_free_decay_time_constant():
    x = integrate_motion(DriveSpec(GapState(), Electrostatic(PLATE, 0.0), 12.0, 4000.0), RES, x0=1e-9)
    env = np.abs(sps.hilbert(x.samples))
    t = x.times
    keep = (t > 1.0) & (t < 11.0)
    slope = np.polyfit(t[keep], np.log(env[keep]), 1)[0]
    assert -1 / slope == pytest.approx(decay_time(RES), rel=0.05)


def test_patch_model_integrates():
    gap = GapState()
    model = Patch(PatchParams(), 1e-2)
    x = integrate_motion(DriveSpec(gap, model, 30.0, 4000.0), RES)
    expected = force_derivative(model, gap.d0) * gap.xs0 / stiffness(RES) * abs(transfer_gain(RES, gap.freq_s))
    assert steady_phasor(x, gap.freq_s).amplitude == pytest.approx(expected, rel=0.01)


def test_deterministic():
    drive = DriveSpec(GapState(), Casimir(PLATE), 3.0, 4000.0)
    assert integrate_motion(drive, RES) == integrate_motion(drive, RES)
