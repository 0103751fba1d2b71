"""End-to-end workflows behind the CLI subcommands.

Each function takes a :class:`~casimir_twin.config.RunConfig` and returns
in-memory results; writing files is left to :mod:`casimir_twin.cli`.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import calibration as cal
from .config import RunConfig, build_model, derive_seed, surface_spec, sweep_point_config, with_seed
from .core import CONSTANTS, stiffness
from .dynamics import DriveSpec, analytic_amplitude, integrate_motion, settling_time, transfer_gain
from .fitting import FitResult, fit_patch_model, fit_power_law, patch_params_from_fit
from .forces import Casimir, Patch, force_derivative
from .patchmap import kelvin_scan, map_statistics, synthesize_surface
from .readout import (
    Phasor,
    TimeSeries,
    add_noise,
    amplitude_spectral_density,
    demodulate,
    displacement_to_voltage,
    voltage_to_displacement,
)


class DataError(ValueError):
    """Input data files that cannot be parsed."""


@dataclass
class SimulationRun:
    displacement: TimeSeries
    voltage: TimeSeries
    phasor: Phasor
    harmonic: Phasor
    predicted_amplitude: float
    t_start: float
    seed: int

    def summary(self, cfg: RunConfig) -> dict:
        res = cfg.apparatus.resonator
        gap = cfg.apparatus.gap
        return {
            "phasor": self.phasor.as_record(),
            "second_harmonic": self.harmonic.as_record(),
            "predicted_amplitude_m": self.predicted_amplitude,
            "amplitude_ratio": self.phasor.amplitude / self.predicted_amplitude if self.predicted_amplitude else None,
            "stiffness_N_per_m": stiffness(res),
            "transfer_gain_abs": abs(transfer_gain(res, gap.freq_s)),
            "t_start_s": self.t_start,
            "noise_seed": self.seed,
            "model_terms": list(cfg.model.terms),
        }


def predicted_amplitude(cfg: RunConfig) -> float:
    res, gap = cfg.apparatus.resonator, cfg.apparatus.gap
    return analytic_amplitude(build_model(cfg), gap, res) * abs(transfer_gain(res, gap.freq_s))


def simulate(cfg: RunConfig) -> SimulationRun:
    """Integrate, add noise, read out through the interferometer and demodulate.

    The interferometer is operated around the mean resonator position, so the
    static Casimir/electrostatic offset does not count against its linear
    range.
    """
    app = cfg.apparatus
    model = build_model(cfg)
    drive = DriveSpec(app.gap, model, cfg.simulation.duration, cfg.simulation.sample_rate)
    x = integrate_motion(drive, app.resonator)
    seed = derive_seed(app.noise.rng_seed, "simulate:noise")
    noise = type(app.noise)(app.noise.asd_displacement, app.noise.day_factor, seed)
    measured = add_noise(x, noise)
    voltage = displacement_to_voltage(measured.with_samples(measured.samples - measured.samples.mean()), app.readout)
    readback = voltage_to_displacement(voltage, app.readout)
    t_start = settling_time(app.resonator)
    phasor = demodulate(readback, app.gap.freq_s, t_start)
    harmonic = demodulate(readback, 2 * app.gap.freq_s, t_start)
    return SimulationRun(measured, voltage, phasor, harmonic, predicted_amplitude(cfg), t_start, seed)


def spectrum(run: SimulationRun):
    return amplitude_spectral_density(run.displacement)


# --- calibration ----------------------------------------------------------------


def bias_grid(cfg: RunConfig) -> np.ndarray:
    c = cfg.calibration
    return np.linspace(c.bias_center - c.bias_span, c.bias_center + c.bias_span, c.bias_points)


def distance_grid(cfg: RunConfig) -> np.ndarray:
    c = cfg.calibration
    return np.linspace(0.0, c.z_max, c.distance_points)


def calibrate_bias(cfg: RunConfig, sweep: cal.BiasSweep | None = None, seed_task: str = "calibrate:bias"):
    app = cfg.apparatus
    synthetic = sweep is None
    if synthetic:
        seed = derive_seed(app.noise.rng_seed, seed_task)
        sweep = cal.synthesize_bias_sweep(
            bias_grid(cfg),
            app.plate,
            app.gap,
            app.resonator,
            asd=app.noise.effective_asd,
            integration_time=cfg.calibration.integration_time,
            seed=seed,
        )
    fit = cal.fit_residual_bias(sweep)
    fit.extra["casimir_floor_m"] = cal.casimir_floor(app.plate, app.gap, app.resonator)
    fit.extra["d0_m"] = sweep.d0
    if synthetic:
        fit.extra["V0_true_V"] = app.gap.V0
    return sweep, fit


def calibrate_distance(cfg: RunConfig, sweep: cal.DistanceSweep | None = None, seed_task: str = "calibrate:distance"):
    app = cfg.apparatus
    c = cfg.calibration
    k_nominal = stiffness(app.resonator)
    V_eff = (sweep.Vg if sweep is not None else c.distance_Vg) + app.gap.V0
    synthetic = sweep is None
    if synthetic:
        seed = derive_seed(app.noise.rng_seed, seed_task)
        sweep = cal.synthesize_distance_sweep(
            distance_grid(cfg),
            c.reference_distance,
            V_eff,
            app.plate,
            app.gap,
            app.resonator,
            asd=app.noise.effective_asd,
            integration_time=c.integration_time,
            seed=seed,
            k_eff=k_nominal / c.stiffness_mismatch,
        )
        sweep = cal.DistanceSweep(sweep.points, c.distance_Vg)
    fit = cal.fit_reference_distance(sweep, k_nominal, app.gap.xs0, V_eff, app.plate.area_S)
    report = fit.as_record()
    report["V_eff_V"] = V_eff
    report["stiffness_nominal_N_per_m"] = k_nominal
    report["stiffness_inferred_N_per_m"] = k_nominal / fit.coeff_ratio
    if synthetic:
        report["d_r_true_m"] = c.reference_distance
        report["stiffness_mismatch_true"] = c.stiffness_mismatch
    return sweep, fit, report


# --- fitting --------------------------------------------------------------------


@dataclass
class Dataset:
    name: str
    d: np.ndarray
    y: np.ndarray
    sigma: np.ndarray


def read_fit_table(path) -> Dataset:
    """CSV with at least the columns d_m, y, sigma; '#' lines are comments."""
    path = Path(path)
    try:
        lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise DataError(f"{path}: empty data file")
    reader = csv.DictReader(lines)
    missing = {"d_m", "y", "sigma"} - set(reader.fieldnames or [])
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    try:
        rows = [(float(r["d_m"]), float(r["y"]), float(r["sigma"])) for r in reader]
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(path.stem, arr[:, 0], arr[:, 1], arr[:, 2])


def write_fit_table(ds: Dataset, path, extra_columns: dict | None = None) -> Path:
    path = Path(path)
    extra_columns = extra_columns or {}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["d_m", "y", "sigma", *extra_columns])
        for i in range(len(ds.d)):
            w.writerow([repr(float(ds.d[i])), repr(float(ds.y[i])), repr(float(ds.sigma[i]))] + [_cell(v[i]) for v in extra_columns.values()])
    return path


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating, int, np.integer)) else str(v)


def _pool(datasets: list[Dataset]):
    d = np.concatenate([ds.d for ds in datasets])
    y = np.concatenate([ds.y for ds in datasets])
    s = np.concatenate([ds.sigma for ds in datasets])
    # mixed zero/non-zero sigma cannot be weighted consistently
    if np.any(s > 0) and np.any(s == 0):
        raise DataError("either all or none of the data points must carry sigma")
    return d, y, s


def _per_dataset(datasets: list[Dataset], residuals: np.ndarray) -> list[dict]:
    out, i = [], 0
    for ds in datasets:
        r = residuals[i : i + len(ds.d)]
        i += len(ds.d)
        z = r / ds.sigma if np.all(ds.sigma > 0) else r
        out.append({"name": ds.name, "n_points": len(ds.d), "residuals": r.tolist(), "chi2": float(z @ z)})
    return out


def fit_datasets(cfg: RunConfig, datasets: list[Dataset], model: str) -> tuple[FitResult, dict]:
    d, y, s = _pool(datasets)
    plate = cfg.apparatus.plate
    if model == "powerlaw":
        res = fit_power_law(d, y, s)
        casimir_coeff = math.pi**2 * CONSTANTS.hbar * CONSTANTS.c * plate.area_S / 60.0
        w = 1.0 / s if np.all(s > 0) else np.ones_like(y)
        basis = d**-5.0
        A5 = float(np.sum(w**2 * basis * y) / np.sum(w**2 * basis**2))
        res.extra["fixed_n5"] = {"A": A5, "A_casimir": casimir_coeff, "ratio_to_casimir": A5 / casimir_coeff}
    elif model == "patch":
        res = fit_patch_model(d, y, s, L=plate.lateral_L, lambda_max=cfg.patch.lambda_max)
        d_mid = float(np.exp(np.mean(np.log(d))))
        fitted = Patch(patch_params_from_fit(res, cfg.patch.lambda_max), plate.lateral_L)
        res.extra["casimir_ratio_at_geometric_mean_d"] = {
            "d_m": d_mid,
            "ratio": float(force_derivative(fitted, d_mid) / force_derivative(Casimir(plate), d_mid)),
        }
    else:
        raise DataError(f"unknown fit model {model!r}")
    report = res.as_record()
    report["model"] = model
    report["datasets"] = _per_dataset(datasets, res.residuals)
    return res, report


def fitted_curve(cfg: RunConfig, res: FitResult, model: str, d: np.ndarray) -> np.ndarray:
    if model == "powerlaw":
        return res["A"] / d ** res["n"]
    fitted = Patch(patch_params_from_fit(res, cfg.patch.lambda_max), cfg.apparatus.plate.lateral_L)
    return force_derivative(fitted, d)


# --- patch maps -------------------------------------------------------------------


def patchmap(cfg: RunConfig):
    s = cfg.surface
    seed = derive_seed(cfg.apparatus.noise.rng_seed, "patchmap")
    true_map = synthesize_surface(surface_spec(cfg, seed))
    scanned = kelvin_scan(true_map, s.tip_diameter, s.step)
    stats = map_statistics(true_map, s.cutoff_lambda)
    report = {
        "seed": seed,
        "true": {
            "std_V": true_map.std(),
            "mean_V": float(true_map.grid.mean()),
            "sigma_L_est_V": stats.sigma_L_est,
            "sigma_S_est_V": stats.sigma_S_est,
            "cutoff_lambda_m": s.cutoff_lambda,
        },
        "scanned": {
            "std_V": scanned.std(),
            "mean_V": float(scanned.grid.mean()),
            "tip_diameter_m": s.tip_diameter,
            "step_m": s.step,
        },
        "input": {"sigma_L_V": s.sigma_L, "corr_L_m": s.corr_L, "sigma_S_V": s.sigma_S, "corr_S_m": s.corr_S},
    }
    report["scanned_to_true_std_ratio"] = scanned.std() / true_map.std() if true_map.std() > 0 else None
    return true_map, scanned, report


# --- sweeps ---------------------------------------------------------------------------


SWEEP_COLUMNS = [
    "d_m",
    "y",
    "sigma",
    "axis",
    "value",
    "amplitude_m",
    "phase_rad",
    "sigma_amplitude_m",
    "predicted_amplitude_m",
]


def _sweep_point(cfg: RunConfig, axis: str, value: float, index: int) -> dict:
    point = sweep_point_config(cfg, axis, value)
    point = with_seed(point, derive_seed(cfg.apparatus.noise.rng_seed, f"sweep:{index}"))
    run = simulate(point)
    app = point.apparatus
    # convert to force-derivative units (N/m), undoing the dynamic gain
    to_force = stiffness(app.resonator) / (app.gap.xs0 * abs(transfer_gain(app.resonator, app.gap.freq_s)))
    return {
        "d_m": app.gap.d0,
        "y": run.phasor.amplitude * to_force,
        "sigma": run.phasor.sigma_amplitude * to_force,
        "axis": axis,
        "value": value,
        "amplitude_m": run.phasor.amplitude,
        "phase_rad": run.phasor.phase,
        "sigma_amplitude_m": run.phasor.sigma_amplitude,
        "predicted_amplitude_m": run.predicted_amplitude,
    }


def sweep(cfg: RunConfig, axis: str, grid, workers: int = 1) -> list[dict]:
    """Simulate every grid point; rows come back in grid order whatever ``workers`` is."""
    grid = [float(v) for v in grid]
    if workers <= 1:
        return [_sweep_point(cfg, axis, v, i) for i, v in enumerate(grid)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda iv: _sweep_point(cfg, axis, iv[1], iv[0]), enumerate(grid)))


def write_sweep_table(rows: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(v) for k, v in r.items()})
    return path
