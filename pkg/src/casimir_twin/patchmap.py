"""Surface-potential maps: two-scale synthesis, Kelvin-probe tip averaging,
and long/short wavelength statistics.

Synthesised maps are periodic Gaussian random fields built in Fourier space.
Each component has the correlation function sigma^2 exp(-r^2 / (2 corr^2)).
The spectral filter is normalised over the discrete modes of the grid, so the
expected pointwise variance is exactly sigma^2 on any grid. A single map only
samples a finite number of correlation areas, though, and its sample
variance scatters accordingly. The k = 0 mode is dropped, which makes every
synthesised map exactly zero-mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

KELVIN_TIP_DIAMETER = 2e-3
KELVIN_STEP = 317.5e-6
MIN_CELLS = 8
# sub-cell samples per axis used to weight partially covered cells
COVERAGE_OVERSAMPLE = 8


class MapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PotentialMap:
    grid: np.ndarray  # volts, [row (y), col (x)]
    pitch: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if g.ndim != 2 or min(g.shape) < MIN_CELLS:
            raise MapError(f"map grid must be 2-D and at least {MIN_CELLS}x{MIN_CELLS}")
        if not self.pitch > 0:
            raise MapError("pitch must be positive")
        if not math.isfinite(float(g.mean())):
            raise MapError("map mean must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def extent(self) -> tuple[float, float]:
        ny, nx = self.grid.shape
        return nx * self.pitch, ny * self.pitch

    def std(self) -> float:
        return float(self.grid.std())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PotentialMap):
            return NotImplemented
        return self.pitch == other.pitch and self.origin == other.origin and np.array_equal(self.grid, other.grid)


@dataclass(frozen=True)
class SurfaceSpec:
    sigma_L: float = 0.02
    corr_L: float = 1e-3
    sigma_S: float = 0.01
    corr_S: float = 100e-6
    rng_seed: int = 0
    extent: tuple[float, float] = (1e-2, 1e-2)
    pitch: float = 50e-6

    def violations(self) -> list[str]:
        out = []
        if self.sigma_L < 0 or self.sigma_S < 0:
            out.append("sigmas must be >= 0")
        if not 0 < self.corr_S < self.corr_L:
            out.append("need 0 < corr_S < corr_L")
        if not self.corr_L < min(self.extent):
            out.append("corr_L must be smaller than the map extent")
        if not self.pitch > 0:
            out.append("pitch must be positive")
        elif self.pitch > self.corr_S / 2:
            out.append(f"pitch {self.pitch:g} m too coarse to resolve corr_S {self.corr_S:g} m (need pitch <= corr_S/2)")
        elif min(self.extent) / self.pitch < MIN_CELLS:
            out.append("extent must span at least 8 cells")
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return int(round(self.extent[1] / self.pitch)), int(round(self.extent[0] / self.pitch))


def _gaussian_field(shape, pitch, sigma, corr, rng) -> np.ndarray:
    ny, nx = shape
    if sigma == 0:
        return np.zeros(shape)
    ky = 2 * math.pi * np.fft.fftfreq(ny, d=pitch)
    kx = 2 * math.pi * np.fft.rfftfreq(nx, d=pitch)
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    spectrum = np.exp(-0.5 * k2 * corr**2)
    spectrum[0, 0] = 0.0
    # rfft halves the spectrum; count each interior column twice
    mult = np.full(kx.size, 2.0)
    mult[0] = 1.0
    if nx % 2 == 0:
        mult[-1] = 1.0
    total = float(np.sum(spectrum * mult[None, :]))
    if total == 0:
        raise MapError("correlation length too long for this grid: no resolvable modes")
    white = rng.standard_normal(shape)
    field = np.fft.irfft2(np.fft.rfft2(white) * np.sqrt(spectrum), s=shape)
    return field * sigma * math.sqrt(ny * nx / total)


def synthesize_components(spec: SurfaceSpec) -> tuple[PotentialMap, PotentialMap]:
    """Long- and short-wavelength components of the surface, separately."""
    problems = spec.violations()
    if problems:
        raise MapError("; ".join(problems))
    shape = spec.shape
    long_seq, short_seq = np.random.SeedSequence(spec.rng_seed).spawn(2)
    long_ = _gaussian_field(shape, spec.pitch, spec.sigma_L, spec.corr_L, np.random.default_rng(long_seq))
    short = _gaussian_field(shape, spec.pitch, spec.sigma_S, spec.corr_S, np.random.default_rng(short_seq))
    return PotentialMap(long_, spec.pitch), PotentialMap(short, spec.pitch)


def synthesize_surface(spec: SurfaceSpec) -> PotentialMap:
    long_, short = synthesize_components(spec)
    return PotentialMap(long_.grid + short.grid, spec.pitch)


def disc_kernel(diameter: float, pitch: float) -> np.ndarray:
    """Cell weights of a uniform disc centred on a cell, normalised to 1."""
    radius = diameter / (2 * pitch)
    half = int(math.ceil(radius + 0.5))
    sub = (np.arange(COVERAGE_OVERSAMPLE) + 0.5) / COVERAGE_OVERSAMPLE - 0.5
    offsets = np.arange(-half, half + 1)
    pos = (offsets[:, None] + sub[None, :]).ravel()
    inside = (pos[:, None] ** 2 + pos[None, :] ** 2) <= radius**2
    n = offsets.size
    cover = inside.reshape(n, COVERAGE_OVERSAMPLE, n, COVERAGE_OVERSAMPLE).mean(axis=(1, 3))
    rows = np.flatnonzero(cover.any(axis=1))
    cols = np.flatnonzero(cover.any(axis=0))
    cover = cover[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    return cover / cover.sum()


def tip_convolve(pmap: PotentialMap, tip_diameter: float) -> PotentialMap:
    """Average over a disc of ``tip_diameter`` around each cell.

    Cells partially covered by the disc are weighted by their covered
    fraction; near the edges only the in-bounds part of the disc counts.
    """
    if tip_diameter < pmap.pitch:
        raise MapError("tip diameter must be >= pitch")
    if tip_diameter > min(pmap.extent):
        raise MapError("tip is larger than the map")
    kernel = disc_kernel(tip_diameter, pmap.pitch)
    if kernel.size == 1:
        return PotentialMap(pmap.grid.copy(), pmap.pitch, pmap.origin)
    num = signal.fftconvolve(pmap.grid, kernel, mode="same")
    den = signal.fftconvolve(np.ones_like(pmap.grid), kernel, mode="same")
    return PotentialMap(num / den, pmap.pitch, pmap.origin)


def kelvin_scan(pmap: PotentialMap, tip_diameter: float = KELVIN_TIP_DIAMETER, step: float = KELVIN_STEP) -> PotentialMap:
    """Tip-averaged map sampled every ``step`` (nearest grid cell)."""
    if step < pmap.pitch:
        raise MapError("scan step must be >= pitch")
    smooth = tip_convolve(pmap, tip_diameter)
    ny, nx = pmap.shape
    ratio = step / pmap.pitch
    iy = np.unique(np.round(np.arange(0, ny, ratio)).astype(int))
    ix = np.unique(np.round(np.arange(0, nx, ratio)).astype(int))
    iy, ix = iy[iy < ny], ix[ix < nx]
    if min(iy.size, ix.size) < MIN_CELLS:
        raise MapError(f"scan yields fewer than {MIN_CELLS} points per axis")
    return PotentialMap(smooth.grid[np.ix_(iy, ix)], step, pmap.origin)


@dataclass(frozen=True)
class MapStatistics:
    sigma_L_est: float
    sigma_S_est: float
    mean: float

    def __iter__(self):
        return iter((self.sigma_L_est, self.sigma_S_est, self.mean))


def map_statistics(pmap: PotentialMap, cutoff_lambda: float) -> MapStatistics:
    """Split the map at ``cutoff_lambda`` with a moving average of that width."""
    lo, hi = 2 * pmap.pitch, min(pmap.extent) / 2
    if not lo <= cutoff_lambda <= hi:
        raise MapError(f"cutoff must lie in [{lo:g}, {hi:g}] m")
    width = max(3, int(round(cutoff_lambda / pmap.pitch)) | 1)
    smooth = ndimage.uniform_filter(pmap.grid, size=width, mode="reflect")
    resid = pmap.grid - smooth
    return MapStatistics(float(smooth.std()), float(resid.std()), float(pmap.grid.mean()))


# --- CSV ---------------------------------------------------------------------


def write_map_csv(pmap: PotentialMap, path) -> Path:
    path = Path(path)
    ny, nx = pmap.shape
    with path.open("w", newline="") as fh:
        fh.write(
            f"pitch_m={pmap.pitch!r},n_rows={ny},n_cols={nx},"
            f"origin_x_m={pmap.origin[0]!r},origin_y_m={pmap.origin[1]!r}\n"
        )
        w = csv.writer(fh)
        for row in pmap.grid:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_map_csv(path) -> PotentialMap:
    path = Path(path)
    with path.open(newline="") as fh:
        header = fh.readline().strip().lstrip("#").strip()
        try:
            meta = dict(item.split("=", 1) for item in header.split(","))
            pitch = float(meta["pitch_m"])
            ny, nx = int(meta["n_rows"]), int(meta["n_cols"])
        except (KeyError, ValueError) as exc:
            raise MapError(f"{path}: bad map header {header!r}") from exc
        origin = (float(meta.get("origin_x_m", 0.0)), float(meta.get("origin_y_m", 0.0)))
        grid = np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
    if grid.shape != (ny, nx):
        raise MapError(f"{path}: header says {ny}x{nx}, found {grid.shape}")
    return PotentialMap(grid, pitch, origin)
