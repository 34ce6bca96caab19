"""Static workshop geometry: base stations, box scatterers and the receiver grid.

Scatterers are axis-aligned boxes.  Every geometric predicate here treats a
box as an *open* set, so a segment that only grazes a face or an edge is not
considered blocked.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_point, check_count, check_positive
from .exceptions import ConfigError, InvalidInputError

SPEED_OF_LIGHT = 299_792_458.0

# Minimum overlap length (m) for a segment to count as entering a box.
_HIT_TOL = 1e-9


@dataclass(frozen=True)
class Scatterer:
    """Axis-aligned box scatterer with a real reflection magnitude."""

    min_corner: tuple
    max_corner: tuple
    reflection_coefficient: float = 0.5
    label: str = ""

    def __post_init__(self):
        lo = as_point(self.min_corner, "min_corner")
        hi = as_point(self.max_corner, "max_corner")
        if np.any(lo > hi):
            raise InvalidInputError(f"scatterer {self.label!r}: min_corner must be <= max_corner")
        if not 0.0 <= self.reflection_coefficient <= 1.0:
            raise InvalidInputError(
                f"scatterer {self.label!r}: reflection_coefficient must lie in [0, 1]"
            )
        object.__setattr__(self, "min_corner", tuple(float(v) for v in lo))
        object.__setattr__(self, "max_corner", tuple(float(v) for v in hi))

    @property
    def centroid(self):
        return 0.5 * (np.asarray(self.min_corner) + np.asarray(self.max_corner))


@dataclass(frozen=True)
class BaseStation:
    position: tuple
    n_antennas: int = 4
    antenna_spacing: float | None = None
    boresight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in as_point(self.position)))
        check_count(self.n_antennas, "n_antennas")
        if self.antenna_spacing is not None:
            check_positive(self.antenna_spacing, "antenna_spacing")


@dataclass(frozen=True)
class ReceiverGrid:
    """Rectangular receiver grid; rows run along x, row index along y."""

    origin: tuple
    spacing_hor: float
    spacing_ver: float
    n_x: int
    n_y: int
    height: float | None = None

    def __post_init__(self):
        origin = as_point(self.origin, "origin")
        check_positive(self.spacing_hor, "spacing_hor")
        check_positive(self.spacing_ver, "spacing_ver")
        check_count(self.n_x, "n_x")
        check_count(self.n_y, "n_y")
        height = float(origin[2]) if self.height is None else float(self.height)
        object.__setattr__(self, "origin", tuple(float(v) for v in origin))
        object.__setattr__(self, "height", height)

    @property
    def n_cells(self):
        return self.n_x * self.n_y

    def cell_index(self, ix, iy):
        return iy * self.n_x + ix

    def bounds(self):
        """(min, max) corner of the grid's bounding box."""
        lo = np.array([self.origin[0], self.origin[1], self.height])
        hi = lo + np.array([(self.n_x - 1) * self.spacing_hor, (self.n_y - 1) * self.spacing_ver, 0.0])
        return lo, hi


@dataclass(frozen=True)
class Scene:
    dimensions: tuple
    base_stations: tuple
    scatterers: tuple = ()
    wavelength: float = SPEED_OF_LIGHT / 6.025e9
    grid: ReceiverGrid | None = None

    _boxes: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = as_point(self.dimensions, "dimensions")
        if np.any(dims <= 0):
            raise InvalidInputError("scene dimensions must be positive")
        object.__setattr__(self, "dimensions", tuple(float(v) for v in dims))
        check_positive(self.wavelength, "wavelength")
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        for bs in self.base_stations:
            if not self.contains(bs.position):
                raise InvalidInputError(f"base station at {bs.position} lies outside the scene")
        for s in self.scatterers:
            if not (self.contains(s.min_corner) and self.contains(s.max_corner)):
                raise InvalidInputError(f"scatterer {s.label!r} extends outside the scene")
        lo = np.array([s.min_corner for s in self.scatterers], dtype=float).reshape(-1, 3)
        hi = np.array([s.max_corner for s in self.scatterers], dtype=float).reshape(-1, 3)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "_boxes", (lo, hi))
        if self.grid is not None:
            check_grid(self, self.grid)

    @property
    def box_arrays(self):
        """Stacked (min_corners, max_corners) arrays of shape (n_scatterers, 3)."""
        return self._boxes

    def contains(self, p, tol=1e-9):
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= -tol) and np.all(p <= np.asarray(self.dimensions) + tol))

    def spacing(self, bs):
        """Antenna spacing of ``bs``; half a wavelength when unset."""
        return 0.5 * self.wavelength if bs.antenna_spacing is None else bs.antenna_spacing

    def subset(self, keep):
        """Copy of the scene retaining only the scatterers flagged in ``keep``."""
        kept = tuple(s for s, k in zip(self.scatterers, keep) if k)
        return Scene(self.dimensions, self.base_stations, kept, self.wavelength, self.grid)


class ScattererClass(str, enum.Enum):
    EFFECTIVE = "effective"
    OBSTRUCTING = "obstructing"
    BACKGROUND = "background"


def segment_box_hits(a, b, lo, hi):
    """Open-segment / open-box intersection via the slab method.

    Broadcasts over leading dimensions: ``a`` and ``b`` have shape (..., 3),
    ``lo`` and ``hi`` shape (k, 3).  Returns a boolean array (..., k).
    """
    a = np.asarray(a, dtype=float)[..., None, :]
    d = np.asarray(b, dtype=float)[..., None, :] - a
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flat = np.abs(d) < 1e-15
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - a) / d
        t2 = (hi - a) / d
    tmin = np.where(flat, -np.inf, np.minimum(t1, t2))
    tmax = np.where(flat, np.inf, np.maximum(t1, t2))
    # A flat axis must sit strictly inside the slab, otherwise no overlap.
    outside = flat & ~((a > lo) & (a < hi))
    t_in = np.maximum(tmin.max(axis=-1), 0.0)
    t_out = np.minimum(tmax.min(axis=-1), 1.0)
    length = np.linalg.norm(d, axis=-1)
    return ((t_out - t_in) * length > _HIT_TOL) & ~outside.any(axis=-1)


def los_blocked(scene, a, b):
    """1 if the open segment (a, b) passes through any scatterer interior, else 0."""
    a = as_point(a, "a")
    b = as_point(b, "b")
    if np.array_equal(a, b):
        raise InvalidInputError("degenerate segment: a == b")
    if not (scene.contains(a) and scene.contains(b)):
        raise InvalidInputError("segment endpoints must lie inside the scene")
    lo, hi = scene.box_arrays
    if len(lo) == 0:
        return 0
    return int(segment_box_hits(a, b, lo, hi).any())


def classify_scatterers(scene, tx, rx, ellipsoid_factor=1.5):
    """Label each scatterer as obstructing, effective or background for a link.

    A box crossed by the direct path is obstructing.  Otherwise it is effective
    when its centroid lies inside the prolate ellipsoid with foci ``tx`` and
    ``rx`` whose major axis is ``ellipsoid_factor`` times the link distance.
    """
    tx = as_point(tx, "tx")
    rx = as_point(rx, "rx")
    if np.array_equal(tx, rx):
        raise InvalidInputError("tx and rx must differ")
    if not ellipsoid_factor > 1:
        raise InvalidInputError(f"ellipsoid_factor must be > 1, got {ellipsoid_factor}")
    lo, hi = scene.box_arrays
    if len(lo) == 0:
        return []
    hits = segment_box_hits(tx, rx, lo, hi)
    c = 0.5 * (lo + hi)
    focal = np.linalg.norm(c - tx, axis=1) + np.linalg.norm(c - rx, axis=1)
    inside = focal <= ellipsoid_factor * np.linalg.norm(rx - tx)
    out = []
    for hit, eff in zip(hits, inside):
        if hit:
            out.append(ScattererClass.OBSTRUCTING)
        elif eff:
            out.append(ScattererClass.EFFECTIVE)
        else:
            out.append(ScattererClass.BACKGROUND)
    return out


def check_grid(scene, grid):
    lo, hi = grid.bounds()
    if not (scene.contains(lo) and scene.contains(hi)):
        raise InvalidInputError("receiver grid exceeds the scene bounds")


def build_grid(scene, grid):
    """Row-major receiver positions (x fastest) at the grid height, shape (n_x*n_y, 3)."""
    check_grid(scene, grid)
    ix = np.arange(grid.n_x)
    iy = np.arange(grid.n_y)
    xx, yy = np.meshgrid(grid.origin[0] + ix * grid.spacing_hor, grid.origin[1] + iy * grid.spacing_ver)
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(grid.n_cells, grid.height)])
    return pts


# -- scene documents ---------------------------------------------------------

_SCENE_KEYS = {"dimensions", "base_stations", "scatterers", "grid", "carrier_frequency_hz", "wavelength"}


def scene_from_dict(doc):
    """Build a :class:`Scene` from a parsed scene document."""
    unknown = set(doc) - _SCENE_KEYS
    if unknown:
        raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
    try:
        dims = doc["dimensions"]
        if isinstance(dims, dict):
            dims = (dims["L"], dims["W"], dims["H"])
        if "wavelength" in doc:
            wavelength = float(doc["wavelength"])
        else:
            wavelength = SPEED_OF_LIGHT / float(doc.get("carrier_frequency_hz", 6.025e9))
        stations = [
            BaseStation(
                position=tuple(b["position"]),
                n_antennas=int(b.get("n_antennas", 4)),
                antenna_spacing=b.get("antenna_spacing"),
                boresight=float(b.get("boresight", 0.0)),
            )
            for b in doc["base_stations"]
        ]
        scatterers = [
            Scatterer(
                tuple(s["min"]),
                tuple(s["max"]),
                float(s.get("reflection_coefficient", 0.5)),
                str(s.get("label", f"s{i}")),
            )
            for i, s in enumerate(doc.get("scatterers", []))
        ]
        grid = None
        if doc.get("grid") is not None:
            g = doc["grid"]
            grid = ReceiverGrid(
                origin=tuple(g["origin"]),
                spacing_hor=float(g["spacing_hor"]),
                spacing_ver=float(g["spacing_ver"]),
                n_x=int(g["n_x"]),
                n_y=int(g["n_y"]),
                height=g.get("height"),
            )
        return Scene(tuple(dims), tuple(stations), tuple(scatterers), wavelength, grid)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scene document: {exc!r}") from exc
    except InvalidInputError as exc:
        raise ConfigError(f"invalid scene: {exc}") from exc


def scene_to_dict(scene):
    doc = {
        "dimensions": {"L": scene.dimensions[0], "W": scene.dimensions[1], "H": scene.dimensions[2]},
        "wavelength": scene.wavelength,
        "base_stations": [
            {
                "position": list(b.position),
                "n_antennas": b.n_antennas,
                "antenna_spacing": b.antenna_spacing,
                "boresight": b.boresight,
            }
            for b in scene.base_stations
        ],
        "scatterers": [
            {
                "min": list(s.min_corner),
                "max": list(s.max_corner),
                "reflection_coefficient": s.reflection_coefficient,
                "label": s.label,
            }
            for s in scene.scatterers
        ],
    }
    if scene.grid is not None:
        g = scene.grid
        doc["grid"] = {
            "origin": list(g.origin),
            "spacing_hor": g.spacing_hor,
            "spacing_ver": g.spacing_ver,
            "n_x": g.n_x,
            "n_y": g.n_y,
            "height": g.height,
        }
    return doc


def load_scene(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scene file {path}: {exc}") from exc
    return scene_from_dict(doc)


def default_scene_path():
    return Path(__file__).parent / "data" / "default_scene.json"


def default_scene():
    """The shipped synthetic workshop (a stand-in, not a replica of any measured site)."""
    return load_scene(default_scene_path())
