"""Wireless environment knowledge (WEK): per-(BS, grid cell) propagation descriptors."""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass

import numpy as np

from ._validation import as_point
from .exceptions import ConfigError, OutOfCoverageError
from .propagation import DIFFRACTION, REFLECTION, aod, get_tracer
from .scene import ScattererClass, build_grid, classify_scatterers, los_blocked

WEK_FIELDS = (
    "blocked",
    "log_distance",
    "aod",
    "n_reflections",
    "reflection_strength",
    "n_diffractions",
    "diffraction_strength",
)
N_DESCRIPTORS = len(WEK_FIELDS)

# Power floor (linear) used when moving path strengths into the dB domain.
STRENGTH_FLOOR = 1e-15


@dataclass(frozen=True)
class WekEntry:
    blocked: int
    log_distance: float
    aod: float
    n_reflections: int
    reflection_strength: float
    n_diffractions: int
    diffraction_strength: float

    def as_array(self):
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(int(v[0]), float(v[1]), float(v[2]), int(v[3]), float(v[4]), int(v[5]), float(v[6]))


class WekMap:
    """Dense WEK table of shape (n_bs, n_cells, 7) over a receiver grid."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[1] != grid.n_cells or values.shape[2] != N_DESCRIPTORS:
            raise ValueError(f"WEK values must have shape (n_bs, {grid.n_cells}, {N_DESCRIPTORS})")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)

    @property
    def n_bs(self):
        return self.values.shape[0]

    def __len__(self):
        return self.values.shape[0] * self.values.shape[1]

    def entry(self, bs, cell):
        return WekEntry.from_array(self.values[bs, cell])

    def nearest_cell(self, position):
        """Index of the grid cell nearest to ``position`` in the horizontal plane.

        Exact midpoints resolve toward the lower cell index.
        """
        p = as_point(position, "position")
        g = self.grid
        ux = (p[0] - g.origin[0]) / g.spacing_hor
        uy = (p[1] - g.origin[1]) / g.spacing_ver
        eps = 1e-9
        if not (-0.5 - eps <= ux <= g.n_x - 0.5 + eps and -0.5 - eps <= uy <= g.n_y - 0.5 + eps):
            raise OutOfCoverageError(f"position {tuple(p)} lies outside the WEK grid coverage")
        ix = min(max(math.ceil(ux - 0.5 - eps), 0), g.n_x - 1)
        iy = min(max(math.ceil(uy - 0.5 - eps), 0), g.n_y - 1)
        return g.cell_index(ix, iy)

    def query(self, bs, position):
        return self.entry(bs, self.nearest_cell(position))

    def to_csv(self, path):
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bs", "cell", "ix", "iy", *WEK_FIELDS])
            for b in range(self.n_bs):
                for c in range(g.n_cells):
                    row = self.values[b, c]
                    w.writerow([b, c, c % g.n_x, c // g.n_x, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path, grid):
        rows = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"bs", "cell", *WEK_FIELDS} - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"WEK file {path} lacks columns {sorted(missing)}")
            for r in reader:
                rows[(int(r["bs"]), int(r["cell"]))] = [float(r[k]) for k in WEK_FIELDS]
        n_bs = 1 + max(b for b, _ in rows) if rows else 0
        values = np.zeros((n_bs, grid.n_cells, N_DESCRIPTORS))
        for b in range(n_bs):
            for c in range(grid.n_cells):
                if (b, c) not in rows:
                    raise ConfigError(f"WEK file {path} has no entry for bs={b} cell={c}")
                values[b, c] = rows[(b, c)]
        return cls(grid, values)


def describe_link(scene, tx, rx, tracer, ellipsoid_factor=1.5):
    """WEK descriptor vector for a single link."""
    classes = classify_scatterers(scene, tx, rx, ellipsoid_factor)
    active = np.array([c is not ScattererClass.BACKGROUND for c in classes], dtype=bool)
    paths = tracer.trace(tx, rx, active=active)
    refl = [p.power for p in paths if p.kind == REFLECTION]
    diff = [p.power for p in paths if p.kind == DIFFRACTION]
    return np.array([
        los_blocked(scene, tx, rx),
        math.log10(float(np.linalg.norm(np.asarray(rx) - np.asarray(tx)))),
        aod(tx, rx),
        len(refl),
        float(sum(refl)),
        len(diff),
        float(sum(diff)),
    ])


def build_wek(scene, grid=None, ellipsoid_factor=1.5, max_reflection_order=2, max_diffraction_order=1, n_paths=10):
    """Build the WEK map for every (base station, grid cell) pair.

    Reflection and diffraction descriptors come from paths traced through the
    channel-relevant scatterers only (effective and obstructing); background
    scatterers are ignored.
    """
    grid = scene.grid if grid is None else grid
    points = build_grid(scene, grid)
    tracer = get_tracer(scene, max_reflection_order, max_diffraction_order, n_paths)
    values = np.zeros((len(scene.base_stations), grid.n_cells, N_DESCRIPTORS))
    for b, bs in enumerate(scene.base_stations):
        tx = np.asarray(bs.position)
        for c, rx in enumerate(points):
            values[b, c] = describe_link(scene, tx, rx, tracer, ellipsoid_factor)
    return WekMap(grid, values)


def cnn_channels(values):
    """Map descriptor rows (..., 7) to the 3 CNN input channels (3, ...).

    Channels: blockage flag, reflection strength (dB), diffraction strength (dB).
    """
    v = np.asarray(values, dtype=float)
    blocked = v[..., 0]
    refl = 10.0 * np.log10(v[..., 4] + STRENGTH_FLOOR)
    diff = 10.0 * np.log10(v[..., 6] + STRENGTH_FLOOR)
    return np.stack([blocked, refl, diff])
