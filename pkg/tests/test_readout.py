import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casimir_twin.core import NoiseSpec, ReadoutParams
from casimir_twin.readout import (
    Phasor,
    ReadoutError,
    TimeSeries,
    add_noise,
    amplitude_spectral_density,
    demodulate,
    displacement_to_voltage,
    noise_std,
    read_phasors_csv,
    read_timeseries_csv,
    voltage_to_displacement,
    write_phasors_csv,
    write_timeseries_csv,
)

RO = ReadoutParams()


def sinusoid(A, f, phase=0.0, fs=1000.0, duration=10.0, offset=0.0):
    t = np.arange(int(round(duration * fs))) / fs
    return TimeSeries(offset + A * np.cos(2 * np.pi * f * t + phase), fs, "m")


# --- time series --------------------------------------------------------------------


def test_timeseries_invariants():
    with pytest.raises(ReadoutError):
        TimeSeries([1.0], 10.0, "m")
    with pytest.raises(ReadoutError):
        TimeSeries([1.0, np.nan], 10.0, "m")
    with pytest.raises(ReadoutError):
        TimeSeries([1.0, 2.0], 0.0, "m")
    with pytest.raises(ReadoutError):
        TimeSeries([1.0, 2.0], 1.0, "A")


def test_timeseries_is_read_only():
    x = TimeSeries([1.0, 2.0, 3.0], 2.0, "m")
    with pytest.raises(ValueError):
        x.samples[0] = 5.0
    assert x.duration == 1.0
    assert list(x.times) == [0.0, 0.5, 1.0]


# --- fringe conversion ---------------------------------------------------------------


def test_zero_displacement_gives_zero_volts():
    v = displacement_to_voltage(TimeSeries(np.zeros(5), 1.0, "m"), RO)
    assert np.all(v.samples == 0) and v.unit == "V"


def test_ten_nanometres_to_volts():
    v = displacement_to_voltage(TimeSeries([10e-9, 10e-9], 1.0, "m"), RO)
    assert v.samples[0] == pytest.approx(2 * math.pi / 633e-9 * 2.3 * 10e-9, rel=1e-14)
    assert v.samples[0] == pytest.approx(0.2284, abs=2e-4)


def test_full_fringe_voltage_to_displacement():
    x = voltage_to_displacement(TimeSeries([2.3, 0.0], 1.0, "V"), RO)
    assert x.samples[0] == pytest.approx(633e-9 / (2 * math.pi), rel=1e-14)
    assert x.samples[0] == pytest.approx(100.7e-9, abs=0.05e-9)
    assert x.samples[1] == 0.0


def test_halving_fringe_voltage_doubles_displacement():
    v = TimeSeries([0.3, -0.1], 1.0, "V")
    full = voltage_to_displacement(v, RO).samples
    half = voltage_to_displacement(v, ReadoutParams(Vfr=RO.Vfr / 2)).samples
    assert np.allclose(half, 2 * full, rtol=1e-15)


@settings(max_examples=50)
@given(st.lists(st.floats(-30e-9, 30e-9), min_size=2, max_size=50))
def test_fringe_round_trip(values):
    x = TimeSeries(values, 100.0, "m")
    back = voltage_to_displacement(displacement_to_voltage(x, RO), RO)
    assert np.allclose(back.samples, x.samples, rtol=1e-12, atol=0)


def test_fringe_wrapping_rejected():
    with pytest.raises(ReadoutError):
        displacement_to_voltage(TimeSeries([0.0, 40e-9], 1.0, "m"), RO)
    with pytest.raises(ReadoutError):
        displacement_to_voltage(TimeSeries([0.0, 1.0], 1.0, "V"), RO)


# --- noise ---------------------------------------------------------------------------


def test_zero_noise_is_bit_exact():
    x = sinusoid(1e-9, 10.0)
    assert add_noise(x, NoiseSpec(asd_displacement=0.0)) is x


def test_noise_sample_std():
    x = TimeSeries(np.zeros(1_000_000), 1000.0, "m")
    noisy = add_noise(x, NoiseSpec(asd_displacement=3e-11, rng_seed=4))
    assert noise_std(3e-11, 1000.0) == pytest.approx(6.7e-10, rel=0.01)
    assert np.std(noisy.samples) == pytest.approx(3e-11 * math.sqrt(500), rel=0.01)


def test_noise_is_seeded():
    x = TimeSeries(np.zeros(1000), 1000.0, "m")
    a = add_noise(x, NoiseSpec(rng_seed=7))
    assert a == add_noise(x, NoiseSpec(rng_seed=7))
    assert a != add_noise(x, NoiseSpec(rng_seed=8))


def test_day_factor_scales_noise():
    x = TimeSeries(np.zeros(10000), 1000.0, "m")
    night = add_noise(x, NoiseSpec(rng_seed=1)).samples
    day = add_noise(x, NoiseSpec(rng_seed=1, day_factor=2.0)).samples
    assert np.allclose(day, 2 * night, rtol=1e-15)


# --- demodulation ---------------------------------------------------------------------


def test_matched_sinusoid_is_exact():
    p = demodulate(sinusoid(3.3e-10, 10.0), 10.0)
    assert p.amplitude == pytest.approx(3.3e-10, rel=1e-10)
    assert abs(p.phase) < 1e-10
    assert p.sigma_amplitude < 1e-10 * 3.3e-10


def test_phase_is_recovered():
    p = demodulate(sinusoid(1.0, 7.0, phase=0.7), 7.0)
    assert p.phase == pytest.approx(0.7, abs=1e-10)


@pytest.mark.parametrize("f", [7.0, 10.0, 13.7])
def test_dc_rejected(f):
    x = TimeSeries(np.full(10000, 4.2e-9), 1000.0, "m")
    assert demodulate(x, f).amplitude < 1e-12 * 4.2e-9


def test_window_starts_at_t_start():
    fs = 1000.0
    t = np.arange(20000) / fs
    x = TimeSeries(np.where(t < 5.0, 1.0, 0.0) * np.cos(2 * np.pi * 10 * t) + np.where(t >= 5.0, 2.0, 0.0) * np.cos(2 * np.pi * 10 * t), fs, "m")
    assert demodulate(x, 10.0, t_start=5.0).amplitude == pytest.approx(2.0, rel=1e-10)


def test_too_short_window():
    with pytest.raises(ReadoutError):
        demodulate(sinusoid(1.0, 1.0, duration=5.0), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_demodulation_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x = TimeSeries(rng.normal(size=4000), 400.0, "m")
    y = TimeSeries(rng.normal(size=4000), 400.0, "m")
    combo = x.with_samples(a * x.samples + b * y.samples)
    lhs = demodulate(combo, 10.0).value
    rhs = a * demodulate(x, 10.0).value + b * demodulate(y, 10.0).value
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_noise_only_phasor_scatter_monte_carlo():
    asd, T, fs = 3e-11, 100.0, 200.0
    zero = TimeSeries(np.zeros(int(T * fs)), fs, "m")
    values, sigmas = [], []
    for seed in range(200):
        p = demodulate(add_noise(zero, NoiseSpec(asd_displacement=asd, rng_seed=seed)), 10.0)
        values.append(p.value)
        sigmas.append(p.sigma_amplitude)
    values = np.array(values)
    per_quadrature = math.sqrt(0.5 * (np.var(values.real) + np.var(values.imag)))
    assert per_quadrature == pytest.approx(asd / math.sqrt(T), rel=0.15)
    assert np.mean(sigmas) == pytest.approx(asd / math.sqrt(T), rel=0.15)


# --- spectral density --------------------------------------------------------------------


def test_white_noise_asd_is_flat():
    x = TimeSeries(np.zeros(400_000), 1000.0, "m")
    noisy = add_noise(x, NoiseSpec(asd_displacement=3e-11, rng_seed=11))
    freq, asd = amplitude_spectral_density(noisy)
    band = (freq >= 1) & (freq <= 100)
    assert np.all(np.abs(asd[band] / 3e-11 - 1) <= 0.10)


def test_parseval_line_power():
    A = 2.5e-9
    x = sinusoid(A, 37.0, fs=1000.0, duration=60.0)
    freq, asd = amplitude_spectral_density(x)
    power = np.sum(asd**2) * (freq[1] - freq[0])
    assert power == pytest.approx(A**2 / 2, rel=0.01)


def test_zero_series_zero_spectrum():
    freq, asd = amplitude_spectral_density(TimeSeries(np.zeros(4096), 1000.0, "m"))
    assert np.all(asd == 0)


def test_spectrum_needs_enough_samples():
    with pytest.raises(ReadoutError):
        amplitude_spectral_density(TimeSeries(np.zeros(100), 1000.0, "m"))


# --- files ------------------------------------------------------------------------------------


def test_timeseries_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = TimeSeries(rng.normal(size=500) * 1e-9, 4000.0, "m")
    assert read_timeseries_csv(write_timeseries_csv(x, tmp_path / "x.csv")) == x
    v = x.with_samples(x.samples * 1e7, "V")
    assert read_timeseries_csv(write_timeseries_csv(v, tmp_path / "v.csv")) == v
    header = (tmp_path / "x.csv").read_text().splitlines()[1]
    assert header == "time_s,displacement_m"


def test_phasor_csv_round_trip(tmp_path):
    ps = [Phasor(1.234e-12, -0.5, 10.0, 3e-14, "m"), Phasor(0.2, 1.0, 20.0, 0.0, "V")]
    assert read_phasors_csv(write_phasors_csv(ps, tmp_path / "p.csv")) == ps
