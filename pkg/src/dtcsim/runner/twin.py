"""Offline build: scene, ray-traced truth atlas and WEK over the receiver grid."""
from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError
from ..propagation import SPEED_OF_LIGHT, get_tracer, path_loss, synthesize_truth_channel
from ..scene import build_grid, default_scene, load_scene
from ..wek import build_wek

__all__ = ["Twin", "load_twin_scene", "build_twin", "get_twin"]


def load_twin_scene(cfg):
    """Scene named by ``cfg`` with the configured carrier and grid size applied."""
    scene = default_scene() if cfg.scene is None else load_scene(Path(cfg.scene))
    if scene.grid is None:
        raise ConfigError("the scene defines no receiver grid")
    grid = scene.grid
    if cfg.grid_n_x is not None or cfg.grid_n_y is not None:
        grid = dataclasses.replace(grid, n_x=cfg.grid_n_x or grid.n_x, n_y=cfg.grid_n_y or grid.n_y)
    scene = dataclasses.replace(scene, wavelength=SPEED_OF_LIGHT / cfg.carrier_frequency_hz, grid=grid)
    if cfg.n_bs is not None and cfg.n_bs != len(scene.base_stations):
        raise ConfigError(f"config expects {cfg.n_bs} base stations, scene has {len(scene.base_stations)}")
    n_t = {b.n_antennas for b in scene.base_stations}
    if len(n_t) != 1:
        raise ConfigError("all base stations must have the same antenna count")
    if cfg.n_antennas is not None and n_t != {cfg.n_antennas}:
        raise ConfigError(f"config expects {cfg.n_antennas} antennas per BS, scene has {n_t.pop()}")
    return scene


@dataclass
class Twin:
    """Everything derived from the geometry alone.

    ``truth`` holds the oracle channel of every (BS, cell) with shape
    (n_bs, n_cells, n_t, n_sc), scaled by ``1/sqrt(n_sc)`` so that
    ``|h|^2`` is a per-subcarrier power gain.  ``truth_pl`` is the oracle
    path loss in dB (inf in outage).
    """

    scene: object
    points: np.ndarray
    truth: np.ndarray
    truth_pl: np.ndarray
    wek: object
    n_subcarriers: int

    @property
    def grid(self):
        return self.scene.grid

    @property
    def n_bs(self):
        return len(self.scene.base_stations)

    @property
    def n_antennas(self):
        return self.scene.base_stations[0].n_antennas

    @functools.cached_property
    def link_energy(self):
        """Sum of |h|^2 over antennas and subcarriers, shape (n_bs, n_cells)."""
        t = self.truth
        return np.sum(t.real.astype(float) ** 2 + t.imag.astype(float) ** 2, axis=(2, 3))

    def row_cells(self, iy):
        g = self.grid
        return iy * g.n_x + np.arange(g.n_x)


def build_twin(cfg):
    scene = load_twin_scene(cfg)
    points = build_grid(scene, scene.grid)
    n_sc = cfg.n_subcarriers
    tracer = get_tracer(scene, cfg.max_reflection_order, cfg.max_diffraction_order, cfg.n_paths)
    n_bs = len(scene.base_stations)
    n_t = scene.base_stations[0].n_antennas
    truth = np.zeros((n_bs, len(points), n_t, n_sc), dtype=np.complex64)
    pl = np.zeros((n_bs, len(points)))
    norm = 1.0 / math.sqrt(n_sc)
    for b, bs in enumerate(scene.base_stations):
        tx = np.asarray(bs.position)
        d = scene.spacing(bs)
        for c, rx in enumerate(points):
            paths = tracer.trace(tx, rx)
            pl[b, c] = path_loss(paths)
            h = synthesize_truth_channel(paths, n_t, n_sc, cfg.subcarrier_spacing_hz, scene.wavelength, d,
                                         bs.boresight)
            truth[b, c] = h * norm
    wek = build_wek(scene, scene.grid, cfg.ellipsoid_factor, cfg.max_reflection_order,
                    cfg.max_diffraction_order, cfg.n_paths)
    return Twin(scene, points, truth, pl, wek, n_sc)


_CACHE = {}


def _key(cfg):
    return (cfg.scene, cfg.carrier_frequency_hz, cfg.bandwidth_hz, cfg.subcarrier_spacing_hz, cfg.grid_n_x,
            cfg.grid_n_y, cfg.max_reflection_order, cfg.max_diffraction_order, cfg.n_paths, cfg.ellipsoid_factor,
            cfg.n_bs, cfg.n_antennas)


def get_twin(cfg):
    """Build (or reuse) the twin for ``cfg``; one geometry is kept in memory."""
    key = _key(cfg)
    if key not in _CACHE:
        _CACHE.clear()
        _CACHE[key] = build_twin(cfg)
    return _CACHE[key]
