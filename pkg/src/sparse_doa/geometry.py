"""Array geometries, plane-wave steering vectors and their angular derivatives.

Angles are radians internally: ``theta`` is elevation measured from the +z axis
in ``[0, pi]`` and ``phi`` is azimuth in ``[0, 2 pi)``. Positions are meters.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .seeding import as_rng

KINDS = ("ULA", "UCA", "URA", "RDA", "custom")

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Direction:
    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise GeometryError(f"theta={self.theta} outside [0, pi]")
        if not (0.0 <= self.phi < TWO_PI):
            raise GeometryError(f"phi={self.phi} outside [0, 2pi)")

    @classmethod
    def from_degrees(cls, theta_deg, phi_deg):
        phi = math.radians(phi_deg) % TWO_PI
        # the modulo can land on 2pi exactly through rounding
        if phi >= TWO_PI:
            phi = 0.0
        return cls(math.radians(theta_deg), phi)

    @classmethod
    def wrap(cls, theta, phi):
        phi = float(phi) % TWO_PI
        if phi >= TWO_PI:
            phi = 0.0
        return cls(float(min(max(theta, 0.0), math.pi)), phi)

    @property
    def degrees(self):
        return math.degrees(self.theta), math.degrees(self.phi)


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Sensor positions of an array.

    Args:
        positions: ``(M, 3)`` Cartesian sensor coordinates in meters.
        kind: One of ``ULA``, ``UCA``, ``URA``, ``RDA`` or ``custom``.
        wavelength: Carrier wavelength in meters.
        params: Generator parameters used by :func:`make_geometry`. For the
            regular kinds the positions are checked against the generator.
    """

    positions: np.ndarray
    kind: str = "custom"
    wavelength: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError(f"positions must be (M, 3), got {pos.shape}")
        if pos.shape[0] < 2:
            raise GeometryError("an array needs at least 2 sensors")
        if self.kind not in KINDS:
            raise GeometryError(f"unknown array kind {self.kind!r}")
        if not self.wavelength > 0:
            raise GeometryError("wavelength must be positive")
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= 0.0:
            raise GeometryError("two sensors share a position")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.kind in ("ULA", "UCA", "URA") and self.params:
            ref = _regular_positions(self.kind, self.params, self.wavelength)
            if ref.shape != pos.shape or np.abs(ref - pos).max() > 1e-12:
                raise GeometryError(f"positions do not follow the {self.kind} generator")

    @property
    def M(self):
        return self.positions.shape[0]

    def __len__(self):
        return self.M

    def subarray(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return ArrayGeometry(self.positions[idx], "custom", self.wavelength)

    def descriptor(self):
        """JSON-friendly description (used in dataset/model headers)."""
        return {
            "kind": self.kind,
            "M": self.M,
            "wavelength": self.wavelength,
            "params": {k: v for k, v in self.params.items()},
            "positions": [[float(c) for c in row] for row in self.positions],
        }

    @classmethod
    def from_descriptor(cls, d):
        return cls(np.array(d["positions"], dtype=np.float64), "custom", float(d["wavelength"]), {})

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "x", "y", "z"])
        for m, (x, y, z) in enumerate(self.positions):
            w.writerow([m, repr(float(x)), repr(float(y)), repr(float(z))])
        return buf.getvalue()


def _regular_positions(kind, params, wavelength):
    if kind == "ULA":
        M, d = int(params["M"]), float(params["spacing"])
        pos = np.zeros((M, 3))
        pos[:, 0] = np.arange(M) * d
        return pos
    if kind == "UCA":
        M, r = int(params["M"]), float(params["radius"])
        ang = TWO_PI * np.arange(M) / M
        return np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros(M)], axis=1)
    if kind == "URA":
        rows, cols = int(params["rows"]), int(params["cols"])
        dx, dy = float(params["dx"]), float(params["dy"])
        r, c = np.divmod(np.arange(rows * cols), cols)
        return np.stack([c * dx, r * dy, np.zeros(rows * cols)], axis=1).astype(np.float64)
    raise GeometryError(kind)


def make_geometry(kind, *, wavelength=1.0, seed=None, sigma=0.0, **params):
    """Build a geometry from generator parameters.

    ``kind`` is case-insensitive. Supported parameters:

    * ULA: ``M``, ``spacing`` (default lambda/2), sensors on the x axis from 0.
    * UCA: ``M`` and either ``radius`` or ``spacing``; ``spacing`` is the arc
      length between neighbours so ``radius = M * spacing / (2 pi)``.
    * URA: ``rows``, ``cols`` (or square ``M``), ``dx``/``dy`` or ``spacing``;
      sensor index is ``row * cols + col``.
    * RDA: ``M``, ``aperture`` (square side, default ``sqrt(M) * lambda/2``),
      ``min_separation`` (default lambda/4) and ``seed``.

    A positive ``sigma`` perturbs every coordinate with ``N(0, sigma^2)`` using
    ``seed``; the result is tagged ``custom`` and keeps the recipe in ``params``.
    """
    kind_u = kind.upper() if kind.lower() != "custom" else "custom"
    lam = float(wavelength)
    if kind_u == "ULA":
        p = {"M": int(params["M"]), "spacing": float(params.get("spacing", lam / 2))}
        _check_count(p["M"])
        _check_positive(p["spacing"], "spacing")
    elif kind_u == "UCA":
        M = int(params["M"])
        _check_count(M)
        if "radius" in params:
            radius = float(params["radius"])
        else:
            spacing = float(params.get("spacing", lam / 2))
            _check_positive(spacing, "spacing")
            radius = M * spacing / TWO_PI
        _check_positive(radius, "radius")
        p = {"M": M, "radius": radius}
    elif kind_u == "URA":
        if "rows" in params:
            rows, cols = int(params["rows"]), int(params["cols"])
        else:
            side = int(round(math.sqrt(int(params["M"]))))
            if side * side != int(params["M"]):
                raise GeometryError("URA needs rows/cols or a square M")
            rows = cols = side
        _check_count(rows * cols)
        spacing = float(params.get("spacing", lam / 2))
        dx, dy = float(params.get("dx", spacing)), float(params.get("dy", spacing))
        _check_positive(dx, "dx")
        _check_positive(dy, "dy")
        p = {"rows": rows, "cols": cols, "dx": dx, "dy": dy}
    elif kind_u == "RDA":
        M = int(params["M"])
        _check_count(M)
        aperture = float(params.get("aperture", math.sqrt(M) * lam / 2))
        min_sep = float(params.get("min_separation", lam / 4))
        _check_positive(aperture, "aperture")
        if seed is None:
            raise GeometryError("RDA needs a seed")
        pos = _random_deployment(M, aperture, min_sep, as_rng(seed))
        p = {"M": M, "aperture": aperture, "min_separation": min_sep, "seed": int(seed)}
        geo = ArrayGeometry(pos, "RDA", lam, p)
        return _perturb(geo, sigma, seed) if sigma > 0 else geo
    elif kind_u == "custom":
        geo = ArrayGeometry(np.asarray(params["positions"], dtype=np.float64), "custom", lam)
        return _perturb(geo, sigma, seed) if sigma > 0 else geo
    else:
        raise GeometryError(f"unknown array kind {kind!r}")
    geo = ArrayGeometry(_regular_positions(kind_u, p, lam), kind_u, lam, p)
    return _perturb(geo, sigma, seed) if sigma > 0 else geo


def _check_count(M):
    if M < 2:
        raise GeometryError(f"need M >= 2, got {M}")


def _check_positive(x, name):
    if not x > 0:
        raise GeometryError(f"{name} must be positive, got {x}")


def _random_deployment(M, aperture, min_sep, rng, max_attempts=100000):
    pts = []
    attempts = 0
    while len(pts) < M:
        attempts += 1
        if attempts > max_attempts:
            raise GeometryError("could not place RDA sensors with the requested separation")
        cand = rng.uniform(0.0, aperture, size=2)
        if all(math.hypot(cand[0] - q[0], cand[1] - q[1]) >= min_sep for q in pts):
            pts.append(cand)
    pos = np.zeros((M, 3))
    pos[:, :2] = np.array(pts)
    return pos


def _perturb(geo, sigma, seed):
    if seed is None:
        raise GeometryError("perturbed geometries need a seed")
    rng = as_rng(seed)
    pos = geo.positions + rng.normal(0.0, sigma, size=geo.positions.shape)
    params = {"base_kind": geo.kind, "base": dict(geo.params), "sigma": float(sigma), "seed": int(seed)}
    return ArrayGeometry(pos, "custom", geo.wavelength, params)


def geometry_from_config(block):
    """Geometry from a config mapping like ``{"kind": "UCA", "M": 16}``."""
    block = dict(block)
    kind = block.pop("kind")
    return make_geometry(kind, **block)


def unit_direction(d):
    """Propagation unit vector ``[cos(phi) sin(theta), sin(phi) sin(theta), cos(theta)]``."""
    st = math.sin(d.theta)
    return np.array([math.cos(d.phi) * st, math.sin(d.phi) * st, math.cos(d.theta)])


def _unit_partials(d):
    ct, st = math.cos(d.theta), math.sin(d.theta)
    cp, sp = math.cos(d.phi), math.sin(d.phi)
    dr_dtheta = np.array([cp * ct, sp * ct, -st])
    dr_dphi = np.array([-sp * st, cp * st, 0.0])
    return dr_dtheta, dr_dphi


def _positions(g, wavelength):
    if isinstance(g, ArrayGeometry):
        return g.positions, g.wavelength
    pos = np.atleast_2d(np.asarray(g, dtype=np.float64))
    return pos, wavelength


def steering_vector(g, d, wavelength=1.0):
    """Steering vector ``a_m = exp(-j 2pi/lambda p_m . r(d))``.

    ``g`` is an :class:`ArrayGeometry` or a raw ``(M, 3)`` position array, in
    which case ``wavelength`` applies.
    """
    pos, lam = _positions(g, wavelength)
    k = TWO_PI / lam
    return np.exp(-1j * k * (pos @ unit_direction(d)))


def steering_derivatives(g, d, wavelength=1.0):
    """Analytic ``(da/dtheta, da/dphi)``."""
    pos, lam = _positions(g, wavelength)
    k = TWO_PI / lam
    a = np.exp(-1j * k * (pos @ unit_direction(d)))
    dr_t, dr_p = _unit_partials(d)
    return -1j * k * (pos @ dr_t) * a, -1j * k * (pos @ dr_p) * a


def steering_matrix(g, thetas, phis, wavelength=1.0):
    """Steering vectors for every ``(theta, phi)`` on a grid.

    Returns an array of shape ``(len(thetas), len(phis), M)``.
    """
    pos, lam = _positions(g, wavelength)
    k = TWO_PI / lam
    th = np.asarray(thetas, dtype=np.float64)[:, None]
    ph = np.asarray(phis, dtype=np.float64)[None, :]
    r = np.stack([np.cos(ph) * np.sin(th), np.sin(ph) * np.sin(th), np.cos(th) * np.ones_like(ph)], axis=-1)
    return np.exp(-1j * k * (r @ pos.T))
