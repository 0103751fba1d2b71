import numpy as np

from casimir_twin import plotting
from casimir_twin.patchmap import SurfaceSpec, kelvin_scan, synthesize_surface

PNG = b"\x89PNG\r\n\x1a\n"


def test_every_figure_renders(tmp_path):
    t = np.linspace(0, 1, 200)
    d = np.linspace(3e-6, 10e-6, 8)
    m = synthesize_surface(SurfaceSpec())
    paths = [
        plotting.timeseries_figure(t, 1e-9 * np.sin(20 * t), np.linspace(0, 100, 50), np.full(50, 3e-11), 0.5, tmp_path / "a.png"),
        plotting.bias_fit_figure(np.linspace(-0.5, 0.5, 11), np.linspace(1, 2, 11) * 1e-10, np.full(11, 1e-12), np.array([1e-9, 4e-10, 1e-10]), 0.2, tmp_path / "b.png"),
        plotting.distance_fit_figure(np.linspace(0, 7e-6, 10), np.linspace(2, 1, 10) * 1e-10, np.full(10, 1e-12), 1e-27, 3e-6, tmp_path / "c.png"),
        plotting.fit_figure([("a1", d, 1 / d**4, 0.05 / d**4)], d, 1 / d**4, "fit", tmp_path / "d.png", reference=("ref", 0.5 / d**4)),
        plotting.maps_figure(m, kelvin_scan(m), tmp_path / "e.png"),
        plotting.sweep_figure("d0", d, 1 / d**4, 0.05 / d**4, 1 / d**4, tmp_path / "f.png"),
    ]
    for p in paths:
        assert p.read_bytes()[:8] == PNG


def test_png_bytes_are_reproducible(tmp_path):
    d = np.linspace(3e-6, 10e-6, 8)
    a = plotting.sweep_figure("d0", d, 1 / d**4, 0.05 / d**4, 1 / d**4, tmp_path / "a.png")
    b = plotting.sweep_figure("d0", d, 1 / d**4, 0.05 / d**4, 1 / d**4, tmp_path / "b.png")
    assert a.read_bytes() == b.read_bytes()
