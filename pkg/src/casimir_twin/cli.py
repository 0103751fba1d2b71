"""Command-line interface: ``casimir-twin <subcommand> [options]``.

Every run writes its outputs (CSV/JSON plus PNG figures) into ``--out`` and a
``manifest.json`` recording the resolved configuration, seed, library
versions and output hashes. ``casimir-twin replay manifest.json --out DIR``
re-runs a manifest and checks that the outputs are byte-identical.

Exit codes: 0 success, 1 replay mismatch, 2 bad configuration or input data,
3 simulation failure, 4 fit failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import calibration as cal
from . import runs
from .config import (
    SWEEP_AXES,
    ConfigError,
    RunConfig,
    config_hash,
    dump_config,
    load_config,
    parse_config,
    validate_run_config,
    validate_sweep_grid,
    with_seed,
)
from .dynamics import IntegrationError, PreconditionError
from .fitting import FitError
from .forces import Casimir, ForceDomainError, force_derivative
from .patchmap import MapError, write_map_csv
from .readout import ReadoutError, write_phasors_csv, write_timeseries_csv

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_FIT = 4

OUT_ENV = "CASIMIR_TWIN_OUT"
MANIFEST = "manifest.json"
SUBCOMMANDS = ("simulate", "calibrate", "fit", "patchmap", "sweep")


class UsageError(ValueError):
    """Bad command-line values that argparse cannot check itself."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _versions() -> dict:
    import matplotlib

    return {
        "casimir_twin": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


# --- subcommands ------------------------------------------------------------------
# each returns the list of files it wrote


def _figures(args) -> bool:
    return not args.no_figures


def cmd_simulate(cfg: RunConfig, args, out: Path) -> list[Path]:
    run = runs.simulate(cfg)
    files = []
    if cfg.simulation.write_series:
        files.append(write_timeseries_csv(run.displacement, out / "displacement.csv"))
        files.append(write_timeseries_csv(run.voltage, out / "voltage.csv"))
    files.append(write_phasors_csv([run.phasor, run.harmonic], out / "phasor.csv"))
    files.append(write_json(run.summary(cfg), out / "summary.json"))
    if _figures(args):
        from . import plotting

        freq, asd = runs.spectrum(run)
        files.append(
            plotting.timeseries_figure(run.displacement.times, run.displacement.samples, freq, asd, run.t_start, out / "simulation.png")
        )
    print(f"amplitude_m={run.phasor.amplitude:.6e} sigma_m={run.phasor.sigma_amplitude:.3e} predicted_m={run.predicted_amplitude:.6e}")
    return files


def cmd_calibrate(cfg: RunConfig, args, out: Path) -> list[Path]:
    sweep = None
    kind = args.kind
    if args.data:
        if len(args.data) != 1:
            raise UsageError("calibrate takes a single --data sweep file")
        try:
            sweep = cal.read_sweep_csv(args.data[0])
        except (cal.SweepFormatError, OSError) as exc:
            # unparseable file; calibration preconditions (e.g. too few points) stay fit errors
            raise runs.DataError(f"{args.data[0]}: {exc}") from None
        kind = "bias" if isinstance(sweep, cal.BiasSweep) else "distance"
    files = []
    if kind == "bias":
        sweep, fit = runs.calibrate_bias(cfg, sweep)
        report = fit.as_record()
        files.append(cal.write_sweep_csv(sweep, out / "bias_sweep.csv"))
        files.append(write_json(report, out / "bias_fit.json"))
        if _figures(args):
            from . import plotting

            files.append(plotting.bias_fit_figure(sweep.Vg, sweep.amplitude, sweep.sigma, fit.coefficients, fit.V0, out / "bias_fit.png"))
        print(f"V0_V={fit.V0:.6e} sigma_V0_V={fit.sigma_V0:.3e}")
    else:
        sweep, fit, report = runs.calibrate_distance(cfg, sweep)
        files.append(cal.write_sweep_csv(sweep, out / "distance_sweep.csv"))
        files.append(write_json(report, out / "distance_fit.json"))
        if _figures(args):
            from . import plotting

            files.append(
                plotting.distance_fit_figure(sweep.z_pzt, sweep.amplitude, sweep.sigma, fit.A, fit.d_r, out / "distance_fit.png")
            )
        print(f"d_r_m={fit.d_r:.6e} sigma_dr_m={fit.sigma_dr:.3e} coeff_ratio={fit.coeff_ratio:.6f}")
    return files


def cmd_fit(cfg: RunConfig, args, out: Path) -> list[Path]:
    if not args.data:
        raise UsageError("fit needs at least one --data file with columns d_m, y, sigma")
    datasets = [runs.read_fit_table(p) for p in args.data]
    res, report = runs.fit_datasets(cfg, datasets, args.model)
    d_all = np.concatenate([ds.d for ds in datasets])
    curve_d = np.geomspace(d_all.min(), d_all.max(), 200)
    curve_y = runs.fitted_curve(cfg, res, args.model, curve_d)
    casimir_y = force_derivative(Casimir(cfg.apparatus.plate), curve_d)
    files = [write_json(report, out / "fit_report.json")]
    curve = runs.Dataset("curve", curve_d, curve_y, np.zeros_like(curve_d))
    files.append(runs.write_fit_table(curve, out / "fit_curve.csv", {"casimir_y": casimir_y}))
    if _figures(args):
        from . import plotting

        label = "power law fit" if args.model == "powerlaw" else "patch model fit"
        files.append(
            plotting.fit_figure(
                [(ds.name, ds.d, ds.y, ds.sigma) for ds in datasets],
                curve_d,
                curve_y,
                label,
                out / "fit.png",
                reference=("ideal Casimir", casimir_y),
            )
        )
    params = " ".join(f"{n}={v:.6e}" for n, v in zip(res.param_names, res.params))
    print(f"{params} chi2_reduced={res.chi2_reduced:.4g} converged={res.converged}")
    return files


def cmd_patchmap(cfg: RunConfig, args, out: Path) -> list[Path]:
    true_map, scanned, report = runs.patchmap(cfg)
    files = [
        write_map_csv(true_map, out / "true_map.csv"),
        write_map_csv(scanned, out / "scanned_map.csv"),
        write_json(report, out / "statistics.json"),
    ]
    if _figures(args):
        from . import plotting

        files.append(plotting.maps_figure(true_map, scanned, out / "maps.png"))
    print(f"true_std_V={true_map.std():.4e} scanned_std_V={scanned.std():.4e}")
    return files


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"--grid: cannot parse {text!r}") from None
    if not grid:
        raise UsageError("--grid must list at least one value")
    return grid


def sweep_settings(cfg: RunConfig, args) -> RunConfig:
    sw = cfg.sweep
    axis = args.axis or sw.axis
    grid = _parse_grid(args.grid) if args.grid else sw.grid
    workers = args.workers if args.workers is not None else sw.workers
    return replace(cfg, sweep=replace(sw, axis=axis, grid=grid, workers=workers))


def cmd_sweep(cfg: RunConfig, args, out: Path) -> list[Path]:
    sw = cfg.sweep
    problems = validate_sweep_grid(cfg, sw.axis, sw.grid)
    if problems:
        raise ConfigError("; ".join(str(p) for p in problems))
    rows = runs.sweep(cfg, sw.axis, sw.grid, sw.workers)
    files = [runs.write_sweep_table(rows, out / "sweep.csv")]
    if _figures(args):
        from . import plotting

        col = lambda k: np.array([r[k] for r in rows])  # noqa: E731
        files.append(
            plotting.sweep_figure(
                sw.axis, col("value"), col("amplitude_m"), col("sigma_amplitude_m"), col("predicted_amplitude_m"), out / "sweep.png"
            )
        )
    print(f"points={len(rows)} axis={sw.axis}")
    return files


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "fit": cmd_fit,
    "patchmap": cmd_patchmap,
    "sweep": cmd_sweep,
}


# --- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casimir-twin", description="Digital twin of a plane-parallel Casimir force apparatus.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file (defaults reproduce the apparatus)")
    common.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./casimir_out)")
    common.add_argument("--seed", type=int, help="master seed; overrides noise.rng_seed")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    sub.add_parser("simulate", parents=[common], help="integrate the resonator and demodulate the readout")
    p = sub.add_parser("calibrate", parents=[common], help="electrostatic bias or distance calibration")
    p.add_argument("--kind", choices=("bias", "distance"), default="bias")
    p.add_argument("--data", nargs="+", type=Path, help="measured sweep CSV instead of a synthetic one")
    p = sub.add_parser("fit", parents=[common], help="fit force-derivative data")
    p.add_argument("--data", nargs="+", type=Path, required=True, help="CSV files with columns d_m, y, sigma")
    p.add_argument("--model", choices=("powerlaw", "patch"), default="patch")
    sub.add_parser("patchmap", parents=[common], help="synthesise a surface and its Kelvin-probe scan")
    p = sub.add_parser("sweep", parents=[common], help="simulate over a grid of d0, Vg or nu_s")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--grid", help="comma-separated grid values (SI units)")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _out_dir(args) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(OUT_ENV, "casimir_out"))


def _resolve_config(args) -> tuple[RunConfig, str]:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if args.command == "sweep":
        cfg = sweep_settings(cfg, args)
    report = validate_run_config(cfg)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.ok:
        raise ConfigError("invalid configuration: " + "; ".join(report.messages()))
    return cfg, dump_config(cfg)


def _inputs(args) -> dict:
    return {str(p): _sha256(Path(p)) for p in (getattr(args, "data", None) or []) if Path(p).is_file()}


def run_command(args) -> int:
    cfg, config_text = _resolve_config(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    config_file = out / "config.ini"
    config_file.write_text(config_text)
    files = COMMANDS[args.command](cfg, args, out)
    files.append(config_file)
    cli_args = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in ("out", "config", "seed")}
    if cli_args.get("data"):
        cli_args["data"] = [str(p) for p in cli_args["data"]]
    manifest = {
        "tool": "casimir-twin",
        "subcommand": args.command,
        "config_path": str(args.config) if args.config is not None else None,
        "output_dir": str(out),
        "rng_seed_override": args.seed,
        "args": cli_args,
        "config_text": config_text,
        "config_sha256": config_hash(cfg),
        "seed": cfg.apparatus.noise.rng_seed,
        "versions": _versions(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "inputs": _inputs(args),
        "outputs": {f.name: _sha256(f) for f in sorted(set(files))},
    }
    write_json(manifest, out / MANIFEST)
    return EXIT_OK


def replay(manifest_path: Path, out: Path) -> int:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        command = manifest["subcommand"]
        stored_args = manifest["args"]
        config_text = manifest["config_text"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"unreadable manifest {manifest_path}: {exc}") from None
    if command not in COMMANDS:
        raise ConfigError(f"manifest names unknown subcommand {command!r}")
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).is_file() or _sha256(Path(path)) != digest:
            raise ConfigError(f"input {path} is missing or has changed since the recorded run")
    out.mkdir(parents=True, exist_ok=True)
    parse_config(config_text)
    config_file = out / "replay_input.ini"
    config_file.write_text(config_text)
    ns = argparse.Namespace(**stored_args)
    ns.command = command
    ns.config = config_file
    ns.out = out
    ns.seed = None
    if getattr(ns, "data", None):
        ns.data = [Path(p) for p in ns.data]
    code = run_command(ns)
    config_file.unlink()
    if code != EXIT_OK:
        return code
    fresh = json.loads((out / MANIFEST).read_text())["outputs"]
    recorded = manifest.get("outputs", {})
    mismatched = sorted(k for k in set(recorded) | set(fresh) if recorded.get(k) != fresh.get(k))
    if mismatched:
        print("replay mismatch: " + ", ".join(mismatched), file=sys.stderr)
        return EXIT_MISMATCH
    print(f"replay identical: {len(fresh)} outputs")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        return run_command(args)
    except (ConfigError, UsageError, runs.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, PreconditionError, ReadoutError, MapError, ForceDomainError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
