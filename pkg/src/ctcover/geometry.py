"""Unit vectors, half-sphere sampling, candidate trajectories and detector hit tests.

Conventions: the world origin is the scan isocenter, z is vertical, and a
tilted circle is the horizontal (xy) circle rotated about the world x-axis.
All lengths are meters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateGeometry, InvalidArgument

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class UnitVec:
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > 1e-12:
            raise InvalidArgument(f"not a unit vector (norm {n!r})")

    @classmethod
    def normalized(cls, v) -> "UnitVec":
        v = np.asarray(v, dtype=float)
        n = float(np.linalg.norm(v))
        if n == 0.0 or not math.isfinite(n):
            raise DegenerateGeometry("cannot normalize a zero-length vector")
        v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True, eq=False)
class SphereSampling:
    """Sample directions u on the upper half unit sphere for one VOI.

    ``points`` is an ``(n, 3)`` array of unit vectors with ``z >= 0``.
    """

    voi_id: str
    points: np.ndarray

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def __len__(self):
        return self.count


@dataclass(frozen=True)
class DetectorSpec:
    width_m: float
    height_m: float
    pixels_u: int
    pixels_v: int

    def __post_init__(self):
        if not (self.width_m > 0 and self.height_m > 0):
            raise InvalidArgument("detector extents must be positive")
        if self.pixels_u < 1 or self.pixels_v < 1:
            raise InvalidArgument("detector needs at least one pixel per axis")

    @property
    def pixel_u_m(self) -> float:
        return self.width_m / self.pixels_u

    @property
    def pixel_v_m(self) -> float:
        return self.height_m / self.pixels_v


@dataclass(frozen=True, eq=False)
class ViewCandidate:
    """One realizable source/detector pose.

    ``circle_id`` names the generator circle the view belongs to (tilt index
    for tilted circles) and is ``None`` for views without one.
    """

    id: int
    source_pos: np.ndarray
    detector_center: np.ndarray
    detector_normal: np.ndarray
    detector_u_axis: np.ndarray
    detector: DetectorSpec
    circle_id: Optional[int] = None

    def __post_init__(self):
        if abs(float(np.dot(self.detector_normal, self.detector_u_axis))) > 1e-9:
            raise InvalidArgument("detector u-axis must be perpendicular to the normal")
        if np.array_equal(self.source_pos, self.detector_center):
            raise DegenerateGeometry("source coincides with detector center")

    @property
    def detector_v_axis(self) -> np.ndarray:
        return np.cross(self.detector_normal, self.detector_u_axis)

    @property
    def sdd(self) -> float:
        """Perpendicular source to detector-plane distance."""
        return float(np.dot(self.source_pos - self.detector_center, self.detector_normal))


@dataclass(frozen=True)
class Voi:
    id: str
    center: tuple
    roi_radius_m: float

    def __post_init__(self):
        if not self.roi_radius_m > 0:
            raise InvalidArgument("roi_radius_m must be positive")

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


def _fibonacci_lattice(n_nominal: int) -> np.ndarray:
    i = np.arange(n_nominal, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n_nominal
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * i
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    # re-normalize to keep |u| = 1 to machine precision
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform points on the full unit sphere (golden-angle lattice)."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    return _fibonacci_lattice(n)


def fibonacci_half_sphere(n: int, voi_id="voi") -> SphereSampling:
    """Sample ``n`` directions on the half sphere ``z >= 0``.

    A full-sphere lattice with ``2n`` nominal points is generated and its upper
    half kept; if the kept count misses ``n`` the nominal count is adjusted and
    the lattice regenerated.
    """
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    nominal = 2 * n
    for _ in range(64):
        pts = _fibonacci_lattice(nominal)
        kept = pts[pts[:, 2] >= 0.0]
        if kept.shape[0] == n:
            return SphereSampling(voi_id=voi_id, points=kept)
        nominal += 2 * (n - kept.shape[0]) or 1
    raise RuntimeError(f"lattice size did not converge for n={n}")  # pragma: no cover


def _oriented_view(vid, source, sdd_m, u_axis, detector, circle_id=None) -> ViewCandidate:
    s_hat = source / np.linalg.norm(source)
    sod = float(np.linalg.norm(source))
    center = -(sdd_m - sod) * s_hat
    # drop any numerical component of u along the normal
    u_axis = u_axis - np.dot(u_axis, s_hat) * s_hat
    u_axis = u_axis / np.linalg.norm(u_axis)
    return ViewCandidate(
        id=vid,
        source_pos=source,
        detector_center=center,
        detector_normal=s_hat,
        detector_u_axis=u_axis,
        detector=detector,
        circle_id=circle_id,
    )


def _check_distances(sod_m, sdd_m):
    if not (0 < sod_m < sdd_m):
        raise InvalidArgument(f"need 0 < sod_m < sdd_m, got sod={sod_m}, sdd={sdd_m}")


def circle_angles(n_per_circle: int, arc_deg: float, start_deg: float = 0.0) -> np.ndarray:
    """Equiangular orbit angles in radians.

    A full 360 degree circle is sampled without repeating its endpoint; a
    partial arc includes both ends.
    """
    if n_per_circle == 1:
        steps = np.zeros(1)
    elif arc_deg >= 360.0:
        steps = np.arange(n_per_circle) * (arc_deg / n_per_circle)
    else:
        steps = np.arange(n_per_circle) * (arc_deg / (n_per_circle - 1))
    return np.deg2rad(start_deg + steps)


def tilted_circle_candidates(
    n_tilts: int,
    tilt_range_deg: Sequence[float],
    n_per_circle: int,
    arc_deg: float,
    sdd_m: float,
    sod_m: float,
    detector: DetectorSpec,
    start_deg: float = 0.0,
    id_offset: int = 0,
) -> list[ViewCandidate]:
    """Views on ``n_tilts`` circles tilted about the x-axis.

    Candidate ids run circle by circle: ``id_offset + tilt_index * n_per_circle + j``.
    The detector normal always points at the source and its u-axis follows
    the orbit tangent, so the detector tilts with the circle.
    """
    if n_tilts < 1 or n_per_circle < 1:
        raise InvalidArgument("n_tilts and n_per_circle must be >= 1")
    if not (0 < arc_deg <= 360):
        raise InvalidArgument("arc_deg must be in (0, 360]")
    lo, hi = tilt_range_deg
    if lo > hi:
        raise InvalidArgument("tilt range must be ordered [min, max]")
    _check_distances(sod_m, sdd_m)

    tilts = np.deg2rad(np.linspace(lo, hi, n_tilts))
    phis = circle_angles(n_per_circle, arc_deg, start_deg)
    views = []
    for ti, tau in enumerate(tilts):
        c, s = math.cos(tau), math.sin(tau)
        rot = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
        for j, phi in enumerate(phis):
            src = rot @ np.array([sod_m * math.cos(phi), sod_m * math.sin(phi), 0.0])
            tangent = rot @ np.array([-math.sin(phi), math.cos(phi), 0.0])
            vid = id_offset + ti * n_per_circle + j
            views.append(_oriented_view(vid, src, sdd_m, tangent, detector, circle_id=ti))
    return views


def full_sphere_candidates(
    n: int, sod_m: float, sdd_m: float, detector: DetectorSpec, id_offset: int = 0
) -> list[ViewCandidate]:
    """Sources on a full-sphere Fibonacci lattice of radius ``sod_m``."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    _check_distances(sod_m, sdd_m)
    views = []
    for i, p in enumerate(fibonacci_sphere(n)):
        ref = np.array([0.0, 0.0, 1.0]) if abs(p[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(ref, p)
        views.append(_oriented_view(id_offset + i, sod_m * p, sdd_m, u, detector))
    return views


def view_direction(view: ViewCandidate, voi: Voi) -> UnitVec:
    """Unit direction from the source to the VOI center."""
    diff = voi.center_array - view.source_pos
    if not np.any(diff):
        raise DegenerateGeometry("VOI center coincides with the source")
    return UnitVec.normalized(diff)


def project_to_detector(view: ViewCandidate, point) -> Optional[tuple[float, float]]:
    """Detector-plane (u, v) coordinates in meters of the ray source -> point.

    Returns ``None`` when the ray is parallel to the plane or meets it at
    ``t <= 0``.
    """
    point = np.asarray(point, dtype=float)
    ray = point - view.source_pos
    if not np.any(ray):
        raise DegenerateGeometry("point coincides with the source")
    denom = float(np.dot(ray, view.detector_normal))
    if denom == 0.0:
        return None
    t = float(np.dot(view.detector_center - view.source_pos, view.detector_normal)) / denom
    if not t > 0:
        return None
    rel = view.source_pos + t * ray - view.detector_center
    return float(np.dot(rel, view.detector_u_axis)), float(np.dot(rel, view.detector_v_axis))


def detector_hit(view: ViewCandidate, point) -> bool:
    """True if the ray from the source through ``point`` lands on the detector.

    The detector rectangle is closed: landing on an edge counts as a hit.
    """
    uv = project_to_detector(view, point)
    if uv is None:
        return False
    half_w = 0.5 * view.detector.width_m * (1.0 + 1e-12)
    half_h = 0.5 * view.detector.height_m * (1.0 + 1e-12)
    return abs(uv[0]) <= half_w and abs(uv[1]) <= half_h


def write_candidates_csv(path, views: Sequence[ViewCandidate]) -> None:
    header = ["id", "source_x", "source_y", "source_z", "center_x", "center_y", "center_z",
              "normal_x", "normal_y", "normal_z", "u_x", "u_y", "u_z"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for v in views:
            vals = np.concatenate([v.source_pos, v.detector_center, v.detector_normal, v.detector_u_axis])
            w.writerow([v.id] + [f"{x:.9g}" for x in vals])


def read_candidates_csv(path, detector: DetectorSpec) -> list[ViewCandidate]:
    """Load candidates written by :func:`write_candidates_csv`.

    The CSV carries 9 significant digits, so the u-axis is re-orthogonalized
    against the normal on load.
    """
    views = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            g = lambda *k: np.array([float(row[x]) for x in k])  # noqa: E731
            n = g("normal_x", "normal_y", "normal_z")
            n /= np.linalg.norm(n)
            u = g("u_x", "u_y", "u_z")
            u -= np.dot(u, n) * n
            u /= np.linalg.norm(u)
            views.append(ViewCandidate(
                id=int(row["id"]),
                source_pos=g("source_x", "source_y", "source_z"),
                detector_center=g("center_x", "center_y", "center_z"),
                detector_normal=n,
                detector_u_axis=u,
                detector=detector,
            ))
    return views
