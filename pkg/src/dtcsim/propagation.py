"""Deterministic ray oracle: LoS, image-method reflections and knife-edge diffraction.

The tracer is a desk-scale stand-in for a commercial ray tracer.  It supports
specular reflections up to second order off box faces and a single
knife-edge diffraction over the dominant blocking box when the direct path is
obstructed.
"""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_point, check_count, check_positive
from .exceptions import InvalidInputError, SingularFitError
from .scene import SPEED_OF_LIGHT, segment_box_hits

LOS = "los"
REFLECTION = "reflection"
DIFFRACTION = "diffraction"
_KIND_ORDER = {LOS: 0, REFLECTION: 1, DIFFRACTION: 2}

# Tolerance (m) when testing whether a reflection point lies on a face rectangle.
_FACE_TOL = 1e-9


@dataclass(frozen=True)
class PathComponent:
    kind: str
    length: float
    gain: complex
    departure_angle: float
    delay: float
    points: tuple = ()

    @property
    def power(self):
        return abs(self.gain) ** 2


@dataclass(frozen=True)
class FiModel:
    """Floating-intercept path-loss model ``PL = alpha + 10 * beta * log10(d)``."""

    alpha: float
    beta: float
    sigma: float

    def predict(self, distance):
        return self.alpha + 10.0 * self.beta * np.log10(np.asarray(distance, dtype=float))

    def to_dict(self):
        return {"alpha_db": self.alpha, "beta": self.beta, "sigma_sf_db": self.sigma}


def knife_edge_loss(nu):
    """Excess loss (dB) of a single knife edge for Fresnel parameter ``nu``."""
    nu = np.asarray(nu, dtype=float)
    loss = 6.9 + 20.0 * np.log10(np.sqrt((nu - 0.1) ** 2 + 1.0) + nu - 0.1)
    return np.where(nu > -0.78, loss, 0.0)


def _azimuth(v):
    return math.atan2(v[1], v[0])


def _pt(v):
    return tuple(float(x) for x in v)


def aod(bs, user):
    """Horizontal angle of departure ``atan2(y_u - y_b, x_u - x_b)`` in (-pi, pi]."""
    b = np.asarray(bs, dtype=float)
    u = np.asarray(user, dtype=float)
    dx, dy = u[0] - b[0], u[1] - b[1]
    if dx == 0 and dy == 0:
        raise InvalidInputError("bs and user share the same horizontal position")
    theta = math.atan2(dy, dx)
    return math.pi if theta == -math.pi else theta


def _free_space_gain(length, wavelength):
    return wavelength / (4.0 * math.pi * length) * np.exp(-2j * math.pi * length / wavelength)


class _Faces:
    """Flattened face table of a scene's boxes."""

    def __init__(self, lo, hi, coeffs):
        n = len(lo)
        box = np.repeat(np.arange(n), 6)
        axis = np.tile([0, 0, 1, 1, 2, 2], n)
        side = np.tile([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0], n)
        coord = np.where(side < 0, lo[box, axis], hi[box, axis])
        others = np.array([[1, 2], [0, 2], [0, 1]])[axis]
        self.box = box
        self.axis = axis
        self.side = side
        self.coord = coord
        self.others = others
        self.rect_lo = np.take_along_axis(lo[box], others, axis=1)
        self.rect_hi = np.take_along_axis(hi[box], others, axis=1)
        self.coeff = np.asarray(coeffs, dtype=float)[box]

    def __len__(self):
        return len(self.box)

    def mirror(self, p, idx):
        """Mirror points ``p`` (n, 3) across faces ``idx`` (n,)."""
        out = np.array(p, dtype=float, copy=True)
        rows = np.arange(len(idx))
        ax = self.axis[idx]
        out[rows, ax] = 2.0 * self.coord[idx] - out[rows, ax]
        return out

    def in_front(self, p, idx):
        """True where point ``p`` lies strictly on the outward side of faces ``idx``."""
        return self.side[idx] * (p[self.axis[idx]] - self.coord[idx]) > 0

    def hit_point(self, a, b, idx):
        """Intersection of segments a->b with face planes; NaN rows when off the rectangle."""
        ax = self.axis[idx]
        rows = np.arange(len(idx))
        da = a[rows, ax]
        db = b[rows, ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.coord[idx] - da) / (db - da)
            p = a + t[:, None] * (b - a)
        p[rows, ax] = self.coord[idx]
        oth = self.others[idx]
        q = np.take_along_axis(p, oth, axis=1)
        ok = (t > 0) & (t < 1)
        ok &= np.all(q >= self.rect_lo[idx] - _FACE_TOL, axis=1)
        ok &= np.all(q <= self.rect_hi[idx] + _FACE_TOL, axis=1)
        return p, ok


class RayTracer:
    """Path tracer bound to one scene.

    Image trees depend only on the transmitter, so they are cached per
    transmitter position; tracing many receivers from a few base stations is
    the common case.
    """

    def __init__(self, scene, max_reflection_order=2, max_diffraction_order=1, n_paths=10):
        if max_reflection_order < 0 or max_diffraction_order < 0:
            raise InvalidInputError("interaction orders must be >= 0")
        if max_reflection_order > 2:
            raise InvalidInputError("reflection orders above 2 are not supported")
        self.scene = scene
        self.max_reflection_order = int(max_reflection_order)
        self.max_diffraction_order = int(max_diffraction_order)
        self.n_paths = check_count(n_paths, "n_paths")
        self.lo, self.hi = scene.box_arrays
        self.faces = _Faces(self.lo, self.hi, [s.reflection_coefficient for s in scene.scatterers])
        self._images = {}

    def _image_tree(self, tx):
        key = tuple(tx)
        tree = self._images.get(key)
        if tree is not None:
            return tree
        faces = self.faces
        all_f = np.arange(len(faces))
        f1 = all_f[faces.in_front(tx, all_f)]
        img1 = faces.mirror(np.repeat(tx[None, :], len(f1), axis=0), f1)
        pairs = np.empty((0, 2), dtype=int)
        img2 = np.empty((0, 3))
        if self.max_reflection_order >= 2 and len(f1):
            a = np.repeat(np.arange(len(f1)), len(faces))
            b = np.tile(all_f, len(f1))
            keep = faces.box[f1[a]] != faces.box[b]
            a, b = a[keep], b[keep]
            src = img1[a]
            front = faces.side[b] * (src[np.arange(len(b)), faces.axis[b]] - faces.coord[b]) > 0
            a, b = a[front], b[front]
            pairs = np.column_stack([a, b])
            img2 = faces.mirror(img1[a], b)
        tree = (f1, img1, pairs, img2)
        self._images[key] = tree
        return tree

    def _clear(self, a, b, active):
        """Rows of segments a->b that no active box obstructs."""
        if not active.any():
            return np.ones(len(a), dtype=bool)
        return ~segment_box_hits(a, b, self.lo[active], self.hi[active]).any(axis=-1)

    def trace(self, tx, rx, active=None):
        """Trace paths between ``tx`` and ``rx``.

        ``active`` optionally masks scatterers: inactive boxes neither reflect
        nor obstruct.
        """
        tx = as_point(tx, "tx")
        rx = as_point(rx, "rx")
        if np.array_equal(tx, rx):
            raise InvalidInputError("tx and rx must differ")
        lam = self.scene.wavelength
        nbox = len(self.lo)
        active = np.ones(nbox, dtype=bool) if active is None else np.asarray(active, dtype=bool)
        faces = self.faces
        paths = []

        blocked_by = np.zeros(nbox, dtype=bool)
        if nbox:
            blocked_by = segment_box_hits(tx, rx, self.lo, self.hi) & active
        if not blocked_by.any():
            d = float(np.linalg.norm(rx - tx))
            paths.append(PathComponent(LOS, d, complex(_free_space_gain(d, lam)), _azimuth(rx - tx), d / SPEED_OF_LIGHT))

        if self.max_reflection_order >= 1 and nbox:
            f1, img1, pairs, img2 = self._image_tree(tx)
            sel = active[faces.box[f1]] & faces.in_front(rx, f1)
            if sel.any():
                idx = np.flatnonzero(sel)
                fi = f1[idx]
                p, ok = faces.hit_point(img1[idx], np.repeat(rx[None, :], len(idx), axis=0), fi)
                idx, fi, p = idx[ok], fi[ok], p[ok]
                if len(idx):
                    vis = self._clear(np.repeat(tx[None, :], len(idx), 0), p, active)
                    vis &= self._clear(p, np.repeat(rx[None, :], len(idx), 0), active)
                    for j in np.flatnonzero(vis):
                        length = float(np.linalg.norm(img1[idx[j]] - rx))
                        g = faces.coeff[fi[j]] * _free_space_gain(length, lam)
                        paths.append(PathComponent(
                            REFLECTION, length, complex(g), _azimuth(p[j] - tx),
                            length / SPEED_OF_LIGHT, (_pt(p[j]),),
                        ))
            if len(pairs):
                fa = f1[pairs[:, 0]]
                fb = pairs[:, 1]
                sel = active[faces.box[fa]] & active[faces.box[fb]] & faces.in_front(rx, fb)
                idx = np.flatnonzero(sel)
                if len(idx):
                    p2, ok = faces.hit_point(img2[idx], np.repeat(rx[None, :], len(idx), 0), fb[idx])
                    idx, p2 = idx[ok], p2[ok]
                if len(idx):
                    p1, ok = faces.hit_point(img1[pairs[idx, 0]], p2, fa[idx])
                    idx, p1, p2 = idx[ok], p1[ok], p2[ok]
                if len(idx):
                    n = len(idx)
                    vis = self._clear(np.repeat(tx[None, :], n, 0), p1, active)
                    vis &= self._clear(p1, p2, active)
                    vis &= self._clear(p2, np.repeat(rx[None, :], n, 0), active)
                    for j in np.flatnonzero(vis):
                        k = idx[j]
                        length = float(np.linalg.norm(img2[k] - rx))
                        coeff = faces.coeff[fa[k]] * faces.coeff[fb[k]]
                        g = coeff * _free_space_gain(length, lam)
                        paths.append(PathComponent(
                            REFLECTION, length, complex(g), _azimuth(p1[j] - tx),
                            length / SPEED_OF_LIGHT, (_pt(p1[j]), _pt(p2[j])),
                        ))

        if blocked_by.any() and self.max_diffraction_order >= 1:
            edge = self._knife_edge(tx, rx, np.flatnonzero(blocked_by))
            if edge is not None:
                paths.append(edge)

        return _finalize(paths, self.n_paths)

    def _knife_edge(self, tx, rx, boxes):
        """Single knife-edge component over the top edge of the dominant blocking box."""
        lam = self.scene.wavelength
        d = rx - tx
        total = float(np.linalg.norm(d))
        best = None
        for j in boxes:
            lo, hi = self.lo[j], self.hi[j]
            # footprint interval of the segment in the horizontal plane
            t_in, t_out = 0.0, 1.0
            for ax in (0, 1):
                if abs(d[ax]) < 1e-15:
                    continue
                t1 = (lo[ax] - tx[ax]) / d[ax]
                t2 = (hi[ax] - tx[ax]) / d[ax]
                t_in = max(t_in, min(t1, t2))
                t_out = min(t_out, max(t1, t2))
            for t in (t_in, t_out):
                t = min(max(t, 1e-6), 1.0 - 1e-6)
                point = tx + t * d
                h = hi[2] - point[2]
                d1, d2 = t * total, (1.0 - t) * total
                nu = h * math.sqrt(2.0 * (d1 + d2) / (lam * d1 * d2))
                if best is None or nu > best[0]:
                    best = (nu, np.array([point[0], point[1], hi[2]]))
        if best is None:
            return None
        nu, e = best
        length = float(np.linalg.norm(e - tx) + np.linalg.norm(rx - e))
        loss = float(knife_edge_loss(nu))
        g = 10.0 ** (-loss / 20.0) * _free_space_gain(length, lam)
        return PathComponent(DIFFRACTION, length, complex(g), _azimuth(e - tx), length / SPEED_OF_LIGHT, (_pt(e),))


def _finalize(paths, n_paths):
    def geometric_key(p):
        return (p.length, _KIND_ORDER[p.kind], p.points)

    strongest = sorted(paths, key=lambda p: (-abs(p.gain),) + geometric_key(p))[:n_paths]
    return sorted(strongest, key=geometric_key)


@functools.lru_cache(maxsize=16)
def get_tracer(scene, max_reflection_order=2, max_diffraction_order=1, n_paths=10):
    return RayTracer(scene, max_reflection_order, max_diffraction_order, n_paths)


def trace_paths(scene, tx, rx, max_reflection_order=2, max_diffraction_order=1, n_paths=10):
    """Paths from ``tx`` to ``rx`` sorted by increasing length (at most ``n_paths``)."""
    check_count(max_reflection_order, "max_reflection_order", minimum=0)
    check_count(max_diffraction_order, "max_diffraction_order", minimum=0)
    tracer = get_tracer(scene, max_reflection_order, max_diffraction_order, n_paths)
    return tracer.trace(tx, rx)


def path_loss(paths, coherent=False):
    """Path loss in dB; ``math.inf`` signals outage (no paths).

    The default incoherent form sums path powers; ``coherent=True`` sums the
    complex amplitudes first.
    """
    if len(paths) == 0:
        return math.inf
    gains = np.array([p.gain for p in paths], dtype=complex)
    power = abs(gains.sum()) ** 2 if coherent else float(np.sum(np.abs(gains) ** 2))
    if power <= 0:
        return math.inf
    return float(-10.0 * np.log10(power))


def array_response(theta, n_antennas, spacing, wavelength):
    """Uniform linear array response ``exp(j 2 pi d/lambda m sin(theta))``."""
    check_count(n_antennas, "n_antennas")
    check_positive(spacing, "spacing")
    check_positive(wavelength, "wavelength")
    m = np.arange(n_antennas)
    return np.exp(1j * 2.0 * np.pi * spacing / wavelength * m * np.sin(theta))


def synthesize_truth_channel(paths, n_antennas, n_subcarriers, subcarrier_spacing, wavelength, spacing, boresight=0.0):
    """N_t x N_sc channel built from traced paths.

    Entry (m, f) sums each path's gain times the array phase at antenna m and
    the delay phase ``exp(-j 2 pi f df tau)`` at subcarrier f.
    """
    check_count(n_antennas, "n_antennas")
    check_count(n_subcarriers, "n_subcarriers")
    if len(paths) == 0:
        return np.zeros((n_antennas, n_subcarriers), dtype=complex)
    gains = np.array([p.gain for p in paths], dtype=complex)
    theta = np.array([p.departure_angle for p in paths]) - boresight
    tau = np.array([p.delay for p in paths])
    m = np.arange(n_antennas)
    f = np.arange(n_subcarriers)
    steer = np.exp(1j * 2.0 * np.pi * spacing / wavelength * np.outer(np.sin(theta), m))  # (P, Nt)
    delay = np.exp(-2j * np.pi * subcarrier_spacing * np.outer(tau, f))  # (P, Nsc)
    return np.einsum("p,pm,pf->mf", gains, steer, delay)


def fit_fi_model(samples):
    """Least-squares floating-intercept fit over (distance_m, pl_db) samples."""
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < 2:
        raise InvalidInputError("need at least two (distance, PL) samples")
    if np.any(data[:, 0] <= 0) or not np.all(np.isfinite(data)):
        raise InvalidInputError("distances must be positive and all values finite")
    x = 10.0 * np.log10(data[:, 0])
    if np.ptp(x) == 0:
        raise SingularFitError("all sample distances are equal")
    design = np.column_stack([np.ones_like(x), x])
    (alpha, beta), *_ = np.linalg.lstsq(design, data[:, 1], rcond=None)
    resid = data[:, 1] - design @ np.array([alpha, beta])
    return FiModel(float(alpha), float(beta), float(np.std(resid)))


def write_fi_json(path, models):
    """Write named FI fits (e.g. ``{"los": FiModel, "nlos": FiModel}``) as JSON."""
    doc = {name: m.to_dict() for name, m in models.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_channel_csv(path, records):
    """Dump channels as rows (bs, user, slot, antenna, subcarrier, re, im).

    ``records`` yields ``(bs, user, slot, matrix)`` tuples.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bs", "user", "slot", "antenna", "subcarrier", "re", "im"])
        for bs, user, slot, h in records:
            h = np.asarray(h)
            for m in range(h.shape[0]):
                for f in range(h.shape[1]):
                    w.writerow([bs, user, slot, m, f, repr(float(h[m, f].real)), repr(float(h[m, f].imag))])
