import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casimir_twin.calibration import (
    BiasSweep,
    CalibrationError,
    DistanceSweep,
    casimir_floor,
    expected_inverse_cube_coefficient,
    fit_reference_distance,
    fit_residual_bias,
    infer_stiffness,
    phasor_noise_sigma,
    read_sweep_csv,
    residual_bias_vs_distance,
    signal_amplitude,
    synthesize_bias_sweep,
    synthesize_distance_sweep,
    write_sweep_csv,
)
from casimir_twin.core import GapState, PlateGeometry, ResonatorParams, stiffness
from casimir_twin.dynamics import analytic_amplitude
from casimir_twin.forces import Casimir, Electrostatic

PLATE = PlateGeometry()
RES = ResonatorParams()
GAP = GapState()  # V0 = 244.7 mV
VG = np.linspace(-0.5, 0.5, 11)
Z = np.linspace(0.0, 7e-6, 10)
K = stiffness(RES)


def distance_sweep(seed=None, asd=3e-11, k_eff=None, d_r=3e-6):
    return synthesize_distance_sweep(Z, d_r, 0.2447, PLATE, GAP, RES, asd=asd, integration_time=100.0, seed=seed, k_eff=k_eff)


# --- sweep invariants -----------------------------------------------------------------


def test_bias_sweep_needs_five_points():
    with pytest.raises(CalibrationError, match="too few points"):
        BiasSweep(np.array([[-1, 2, 0], [0, 1, 0], [1, 2, 0]]), 5e-6)


def test_bias_sweep_must_bracket_minimum():
    pts = np.column_stack([np.arange(6.0), np.arange(6.0) + 1, np.zeros(6)])
    with pytest.raises(CalibrationError, match="bracket"):
        BiasSweep(pts, 5e-6)


def test_distance_sweep_monotone():
    pts = np.column_stack([[0, 1, 3, 2, 4], np.ones(5), np.zeros(5)])
    with pytest.raises(CalibrationError, match="monotone"):
        DistanceSweep(pts, 0.0)


# --- residual bias -----------------------------------------------------------------------


def test_noiseless_bias_recovery():
    fit = fit_residual_bias(synthesize_bias_sweep(VG, PLATE, GAP, RES))
    assert fit.V0 == pytest.approx(0.2447, abs=1e-6)


def test_minimum_sits_at_minus_v0():
    grid = np.linspace(-0.5, 0.0, 11)  # contains -0.2447 only approximately; add it
    grid = np.sort(np.append(grid, -0.2447))
    sweep = synthesize_bias_sweep(grid, PLATE, GAP, RES)
    assert sweep.Vg[np.argmin(sweep.amplitude)] == pytest.approx(-0.2447)


def test_floor_is_casimir_amplitude():
    sweep = synthesize_bias_sweep(np.array([-0.3, -0.2447, -0.2, 0.0, 0.1]), PLATE, GAP, RES)
    assert sweep.amplitude.min() == pytest.approx(casimir_floor(PLATE, GAP, RES), rel=1e-12)
    assert casimir_floor(PLATE, GAP, RES) == pytest.approx(1.0e-12, rel=0.06)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.3, 0.3))
def test_bias_fit_translation_covariance(offset):
    sweep = synthesize_bias_sweep(VG, PLATE, GAP, RES, asd=3e-11, seed=3)
    shifted = BiasSweep(sweep.points + np.array([offset, 0, 0]), sweep.d0)
    assert fit_residual_bias(shifted).V0 == pytest.approx(fit_residual_bias(sweep).V0 - offset, abs=1e-9)


def test_concave_sweep_rejected():
    x = np.linspace(-1, 1, 7)
    pts = np.column_stack([x, [1.2, 1.8, 1.95, 1.0, 1.95, 1.8, 1.2], np.zeros(7)])
    with pytest.raises(CalibrationError, match="no amplitude minimum"):
        fit_residual_bias(BiasSweep(pts, 5e-6))


def test_bias_noise_monte_carlo():
    fits = [fit_residual_bias(synthesize_bias_sweep(VG, PLATE, GAP, RES, asd=3e-11, seed=s)) for s in range(60)]
    V0 = np.array([f.V0 for f in fits])
    assert np.std(V0, ddof=1) <= 2e-3
    assert abs(np.mean(V0) - 0.2447) <= 3 * np.std(V0, ddof=1) / math.sqrt(len(V0)) + 1e-5
    # the reported sigma describes the actual scatter
    assert np.mean([f.sigma_V0 for f in fits]) == pytest.approx(np.std(V0, ddof=1), rel=0.3)


def test_per_distance_v0_is_constant():
    sweeps = [
        synthesize_bias_sweep(VG, PLATE, GapState(d0=d), RES, asd=3e-11, seed=i) for i, d in enumerate((3e-6, 5e-6, 8e-6))
    ]
    report = residual_bias_vs_distance(sweeps)
    assert report["weighted_mean_V0_V"] == pytest.approx(0.2447, abs=1e-3)
    assert report["chi2_reduced_constant"] < 10


# --- distance calibration ------------------------------------------------------------------


def test_noiseless_distance_recovery():
    fit = fit_reference_distance(distance_sweep(asd=0.0), K, GAP.xs0, 0.2447, PLATE.area_S)
    assert abs(fit.d_r - 3e-6) <= 1e-12
    assert fit.coeff_ratio == pytest.approx(1.0, rel=1e-9)
    assert np.max(np.abs(fit.residuals)) <= 1e-9 * distance_sweep(asd=0.0).amplitude.max()


def test_stiffness_mismatch_shows_in_ratio():
    fit = fit_reference_distance(distance_sweep(asd=0.0, k_eff=K / 1.05), K, GAP.xs0, 0.2447, PLATE.area_S)
    assert fit.coeff_ratio == pytest.approx(1.05, rel=1e-9)


def test_distance_noise_monte_carlo():
    fits = [fit_reference_distance(distance_sweep(seed=s), K, GAP.xs0, 0.2447, PLATE.area_S) for s in range(60)]
    d_r = np.array([f.d_r for f in fits])
    assert np.std(d_r, ddof=1) <= 40e-9
    assert max(f.sigma_dr for f in fits) <= 40e-9
    assert 0.5 <= np.mean([f.chi2_reduced for f in fits]) <= 2.0


def test_distance_fit_needs_bias():
    with pytest.raises(CalibrationError):
        fit_reference_distance(distance_sweep(asd=0.0), K, GAP.xs0, 0.0, PLATE.area_S)


def test_expected_coefficient():
    A = expected_inverse_cube_coefficient(K, 45e-9, 0.1, 1e-4)
    assert A / (5e-6) ** 3 == pytest.approx(analytic_amplitude(Electrostatic(PLATE, 0.1), GAP, RES), rel=1e-14)


# --- stiffness ---------------------------------------------------------------------------------


def test_infer_stiffness_hand_value():
    assert infer_stiffness(4.4e-10, 0.1, 5e-6, 45e-9, 1e-4) == pytest.approx(7.2, abs=0.05)


def test_infer_stiffness_inverse_proportional():
    a = infer_stiffness(4.4e-10, 0.1, 5e-6, 45e-9, 1e-4)
    assert infer_stiffness(8.8e-10, 0.1, 5e-6, 45e-9, 1e-4) == pytest.approx(a / 2, rel=1e-15)


@settings(max_examples=100)
@given(st.floats(1e-7, 1e-3), st.floats(10.0, 1000.0), st.floats(1e-6, 2e-5), st.floats(0.01, 1.0))
def test_infer_stiffness_inverts_analytic_amplitude(m, nu_r, d0, V):
    res = ResonatorParams(mass_m=m, freq_r=nu_r)
    gap = GapState(d0=d0, xs0=d0 / 100, freq_s=min(10.0, nu_r / 2))
    A = analytic_amplitude(Electrostatic(PLATE, V), gap, res)
    assert infer_stiffness(A, V, d0, gap.xs0, PLATE.area_S) == pytest.approx(stiffness(res), rel=1e-12)


def test_infer_stiffness_rejects_bad_input():
    with pytest.raises(CalibrationError):
        infer_stiffness(0.0, 0.1, 5e-6, 45e-9, 1e-4)


# --- synthesis and files ---------------------------------------------------------------------------


def test_signal_amplitude_includes_gain():
    quasi = analytic_amplitude(Casimir(PLATE), GAP, RES)
    assert signal_amplitude(Casimir(PLATE), GAP, RES) == pytest.approx(quasi * 1.0064, rel=1e-4)


def test_phasor_noise_sigma():
    assert phasor_noise_sigma(3e-11, 100.0) == pytest.approx(3e-12)


def test_synthesis_is_seeded():
    a = synthesize_bias_sweep(VG, PLATE, GAP, RES, asd=3e-11, seed=5)
    b = synthesize_bias_sweep(VG, PLATE, GAP, RES, asd=3e-11, seed=5)
    assert np.array_equal(a.points, b.points)
    assert np.all(a.sigma == 3e-12)


def test_sweep_csv_round_trip(tmp_path):
    b = synthesize_bias_sweep(VG, PLATE, GAP, RES, asd=3e-11, seed=5)
    back = read_sweep_csv(write_sweep_csv(b, tmp_path / "b.csv"))
    assert isinstance(back, BiasSweep) and np.array_equal(back.points, b.points) and back.d0 == b.d0
    d = distance_sweep(seed=1)
    back = read_sweep_csv(write_sweep_csv(d, tmp_path / "d.csv"))
    assert isinstance(back, DistanceSweep) and np.array_equal(back.points, d.points)


def test_sweep_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("Vg_V,amplitude_m,sigma_m\n0,1,0\n")
    with pytest.raises(CalibrationError, match="header"):
        read_sweep_csv(p)
    p.write_text("# kind=bias,d0_m=5e-06\nVg_V,amplitude_m,sigma_m\n0,1,0\n1,0.5,0\n2,1,0\n")
    with pytest.raises(CalibrationError, match="too few points"):
        read_sweep_csv(p)
