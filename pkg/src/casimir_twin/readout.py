"""Interferometric readout, displacement noise and homodyne demodulation.

The fringe relation is linear: delta_x = (lambda / 2 pi) * V / V_fr. Note
that a Michelson interferometer measuring a mirror displacement would give
lambda / 4 pi; this module keeps lambda / 2 pi and exposes the factor through
``ReadoutParams`` only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import signal

from .core import NoiseSpec, ReadoutParams

Unit = Literal["m", "V"]
UNIT_COLUMNS = {"m": "displacement_m", "V": "voltage_V"}

MIN_DEMOD_PERIODS = 10
MIN_ASD_SAMPLES = 1024
# Largest displacement treated as linear on a fringe, as a fraction of lambda.
LINEAR_FRACTION = 1.0 / 20.0


class ReadoutError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TimeSeries:
    samples: np.ndarray
    sample_rate: float
    unit: Unit

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if not self.sample_rate > 0:
            raise ReadoutError("sample_rate must be positive")
        if arr.ndim != 1 or arr.size < 2:
            raise ReadoutError("a time series needs at least 2 samples")
        if not np.all(np.isfinite(arr)):
            raise ReadoutError("time series contains non-finite samples")
        if self.unit not in UNIT_COLUMNS:
            raise ReadoutError(f"unknown unit {self.unit!r}")

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.unit == other.unit
            and self.sample_rate == other.sample_rate
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return (self.samples.size - 1) / self.sample_rate

    def with_samples(self, samples, unit: Unit | None = None) -> "TimeSeries":
        return TimeSeries(samples, self.sample_rate, unit or self.unit)


@dataclass(frozen=True)
class Phasor:
    """Amplitude and phase of x(t) = amplitude * cos(2 pi freq t + phase)."""

    amplitude: float
    phase: float
    freq: float
    sigma_amplitude: float
    unit: Unit = "m"

    @property
    def value(self) -> complex:
        return self.amplitude * complex(math.cos(self.phase), math.sin(self.phase))

    def as_record(self) -> dict:
        return {
            "freq_hz": self.freq,
            "amplitude": self.amplitude,
            "phase_rad": self.phase,
            "sigma_amplitude": self.sigma_amplitude,
            "unit": self.unit,
        }


def displacement_to_voltage(x: TimeSeries, ro: ReadoutParams) -> TimeSeries:
    if x.unit != "m":
        raise ReadoutError("expected a displacement series")
    limit = ro.lambda_laser * LINEAR_FRACTION
    peak = float(np.max(np.abs(x.samples)))
    if peak >= limit:
        raise ReadoutError(
            f"displacement {peak:.3g} m leaves the linear fringe range (< {limit:.3g} m); fringe wrapping is not modelled"
        )
    return x.with_samples(2.0 * math.pi / ro.lambda_laser * ro.Vfr * x.samples, "V")


def voltage_to_displacement(v: TimeSeries, ro: ReadoutParams) -> TimeSeries:
    if v.unit != "V":
        raise ReadoutError("expected a voltage series")
    return v.with_samples(ro.lambda_laser / (2.0 * math.pi) * v.samples / ro.Vfr, "m")


def noise_std(asd: float, sample_rate: float) -> float:
    """Per-sample std of white noise with one-sided ASD ``asd``."""
    return asd * math.sqrt(sample_rate / 2.0)


def add_noise(x: TimeSeries, spec: NoiseSpec) -> TimeSeries:
    """Add white Gaussian displacement noise; deterministic in ``spec.rng_seed``."""
    asd = spec.effective_asd
    if asd == 0:
        return x
    rng = np.random.default_rng(spec.rng_seed)
    noise = rng.normal(0.0, noise_std(asd, x.sample_rate), size=len(x))
    return x.with_samples(x.samples + noise)


def demodulate(x: TimeSeries, freq: float, t_start: float = 0.0) -> Phasor:
    """Homodyne (lock-in) demodulation at ``freq`` from ``t_start`` onwards.

    The window is cut to an integer number of reference periods, so a DC
    offset is rejected. The reference phase is locked to t = 0 of the
    series. ``sigma_amplitude`` is the per-quadrature standard error derived
    from the scatter of single-period phasors.
    """
    if not freq > 0:
        raise ReadoutError("demodulation frequency must be positive")
    fs = x.sample_rate
    i0 = int(math.ceil(t_start * fs - 1e-9))
    available = (len(x) - i0) / fs
    n_periods = int(math.floor(available * freq + 1e-9))
    if n_periods < MIN_DEMOD_PERIODS:
        raise ReadoutError(
            f"analysis window holds {n_periods} periods of {freq:g} Hz; need >= {MIN_DEMOD_PERIODS}"
        )
    n = int(math.floor(n_periods * fs / freq + 1e-9))
    idx = np.arange(i0, i0 + n)
    ref = np.exp(-2j * math.pi * freq * idx / fs)
    prod = x.samples[i0 : i0 + n] * ref
    z = 2.0 * prod.mean()

    edges = np.floor(np.arange(n_periods + 1) * fs / freq + 1e-9).astype(int)
    csum = np.concatenate(([0.0], np.cumsum(prod)))
    per_period = 2.0 * (csum[edges[1:]] - csum[edges[:-1]]) / np.diff(edges)
    spread = 0.5 * (np.var(per_period.real, ddof=1) + np.var(per_period.imag, ddof=1))
    sigma = math.sqrt(spread / n_periods)

    # z = A e^{i phi} for x = A cos(w t + phi)
    return Phasor(float(abs(z)), float(np.angle(z)), freq, sigma, x.unit)


def amplitude_spectral_density(x: TimeSeries, segment_length: int | None = None):
    """One-sided Welch ASD (unit / sqrt(Hz)); returns ``(freq, asd)`` arrays.

    White noise of ASD ``a`` gives a flat curve at ``a``. Segments default to
    the power of two nearest above one second of data (at least 1024
    samples), i.e. roughly 1 Hz resolution with many averages.
    """
    n = len(x)
    if n < MIN_ASD_SAMPLES:
        raise ReadoutError(f"need >= {MIN_ASD_SAMPLES} samples for a spectral estimate, got {n}")
    if segment_length is None:
        segment_length = max(MIN_ASD_SAMPLES, 2 ** int(math.ceil(math.log2(x.sample_rate))))
        segment_length = min(segment_length, n)
    freq, psd = signal.welch(
        x.samples, fs=x.sample_rate, window="hann", nperseg=segment_length, detrend=False, scaling="density"
    )
    return freq, np.sqrt(psd)


# --- CSV ---------------------------------------------------------------------


def write_timeseries_csv(x: TimeSeries, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# unit={x.unit},sample_rate_hz={x.sample_rate!r}\n")
        w = csv.writer(fh)
        w.writerow(["time_s", UNIT_COLUMNS[x.unit]])
        for t, v in zip(x.times, x.samples):
            w.writerow([repr(float(t)), repr(float(v))])
    return path


def read_timeseries_csv(path) -> TimeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ReadoutError(f"{path}: missing '# unit=...,sample_rate_hz=...' header")
        meta = dict(item.split("=", 1) for item in first[1:].strip().split(","))
        try:
            unit = meta["unit"].strip()
            rate = float(meta["sample_rate_hz"])
        except KeyError as exc:
            raise ReadoutError(f"{path}: header lacks {exc}") from None
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time_s", UNIT_COLUMNS.get(unit, "")]:
        raise ReadoutError(f"{path}: unexpected column header {rows[:1]}")
    values = [float(r[1]) for r in rows[1:] if r]
    return TimeSeries(np.array(values), rate, unit)


PHASOR_FIELDS = ["freq_hz", "amplitude", "phase_rad", "sigma_amplitude", "unit"]


def write_phasors_csv(phasors, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PHASOR_FIELDS)
        w.writeheader()
        for p in phasors:
            rec = p.as_record()
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    return path


def read_phasors_csv(path) -> list[Phasor]:
    with Path(path).open(newline="") as fh:
        return [
            Phasor(float(r["amplitude"]), float(r["phase_rad"]), float(r["freq_hz"]), float(r["sigma_amplitude"]), r["unit"])
            for r in csv.DictReader(fh)
        ]
