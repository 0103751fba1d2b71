"""Report figures written next to the CSV/JSON outputs of each run.

Only the CLI report path imports this module; the numerical modules never
plot.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "font.family": "DejaVu Sans",
}
# keep PNG bytes reproducible between runs
_SAVE_KW = {"metadata": {"Software": None}}

UM = 1e6


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def timeseries_figure(times, displacement, freq, asd, t_start, path, max_points=20000):
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 6.0))
        stride = max(1, len(times) // max_points)
        ax1.plot(times[::stride], np.asarray(displacement)[::stride] * 1e9, lw=0.5)
        ax1.axvline(t_start, color="k", ls="--", lw=0.8, label="demodulation start")
        ax1.set_xlabel("time (s)")
        ax1.set_ylabel("displacement (nm)")
        ax1.legend(loc="upper right")
        mask = freq > 0
        ax2.loglog(freq[mask], asd[mask], lw=0.7)
        ax2.set_xlabel("frequency (Hz)")
        ax2.set_ylabel(r"ASD (m/$\sqrt{\mathrm{Hz}}$)")
        return _save(fig, path)


def bias_fit_figure(Vg, amplitude, sigma, coefficients, V0, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(Vg, amplitude, yerr=sigma, fmt="o", ms=4, label="sweep")
        v = np.linspace(np.min(Vg), np.max(Vg), 400)
        ax.plot(v, np.polyval(coefficients, v), label="parabola fit")
        ax.axvline(-V0, color="k", ls="--", lw=0.8, label=f"Vg = -V0 = {-V0 * 1e3:.2f} mV")
        ax.set_xlabel("applied bias Vg (V)")
        ax.set_ylabel("amplitude (m)")
        ax.legend()
        return _save(fig, path)


def distance_fit_figure(z, amplitude, sigma, A, d_r, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        d = (np.asarray(z) + d_r) * UM
        ax.errorbar(d, amplitude, yerr=sigma, fmt="o", ms=4, label="sweep")
        zz = np.linspace(np.min(z), np.max(z), 400)
        ax.plot((zz + d_r) * UM, A / (zz + d_r) ** 3, label=r"$A/d^3$ fit")
        ax.set_yscale("log")
        ax.set_xlabel(r"gap d = d$_r$ + z (µm)")
        ax.set_ylabel("amplitude (m)")
        ax.legend()
        return _save(fig, path)


def fit_figure(datasets, curve_d, curve_y, label, path, reference=None):
    """Data sets as (name, d, y, sigma) with the fitted curve on log axes."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, d, y, s in datasets:
            ax.errorbar(np.asarray(d) * UM, y, yerr=s, fmt="o", ms=4, label=name)
        ax.plot(np.asarray(curve_d) * UM, curve_y, "k-", label=label)
        if reference is not None:
            ref_label, ref_y = reference
            ax.plot(np.asarray(curve_d) * UM, ref_y, "k:", label=ref_label)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("gap (µm)")
        ax.set_ylabel("force derivative (N/m)")
        ax.legend()
        return _save(fig, path)


def maps_figure(true_map, scanned_map, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.0))
        vmax = float(np.max(np.abs(true_map.grid))) * 1e3 or 1.0
        for ax, m, title in ((axes[0], true_map, "synthesised surface"), (axes[1], scanned_map, "Kelvin scan")):
            ex, ey = m.extent
            im = ax.imshow(
                m.grid * 1e3,
                origin="lower",
                extent=(0, ex * 1e3, 0, ey * 1e3),
                cmap="RdBu_r",
                vmin=-vmax,
                vmax=vmax,
            )
            ax.set_title(f"{title}, std {m.std() * 1e3:.2f} mV", fontsize=9)
            ax.set_xlabel("x (mm)")
            ax.set_ylabel("y (mm)")
            ax.grid(False)
        fig.colorbar(im, ax=list(axes), label="potential (mV)", shrink=0.8)
        fig.savefig(path, **_SAVE_KW)
        plt.close(fig)
        return Path(path)


def sweep_figure(axis, values, amplitude, sigma, predicted, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(values, amplitude, yerr=sigma, fmt="o", ms=4, label="simulated")
        ax.plot(values, predicted, "k-", lw=0.8, label="first-order prediction")
        if axis == "d0":
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel({"d0": "d0 (m)", "Vg": "Vg (V)", "nu_s": "source frequency (Hz)"}[axis])
        ax.set_ylabel("amplitude at source frequency (m)")
        ax.legend()
        return _save(fig, path)
