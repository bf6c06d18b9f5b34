"""Voxel phantoms, Siddon ray traversal, Beer-Lambert projections and the absorption metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import io
from .errors import DegenerateGeometry, InvalidArgument, RoiNotVisible
from .geometry import ViewCandidate, Voi, project_to_detector

SHAPE_KINDS = ("box", "sphere", "cylinder")


@dataclass(frozen=True)
class Grid:
    """Regular voxel grid; ``origin_m`` is the center of voxel (0, 0, 0)."""

    dims: tuple
    voxel_size_m: float
    origin_m: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidArgument(f"dims must be three integers >= 1, got {self.dims}")
        if not self.voxel_size_m > 0:
            raise InvalidArgument("voxel_size_m must be positive")

    @classmethod
    def centered(cls, dims, voxel_size_m):
        """Grid whose bounding box is centered on the world origin."""
        origin = tuple(-0.5 * (n - 1) * voxel_size_m for n in dims)
        return cls(tuple(int(n) for n in dims), float(voxel_size_m), origin)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin_m, dtype=float) - 0.5 * self.voxel_size_m

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.asarray(self.dims, dtype=float) * self.voxel_size_m

    def voxel_centers(self) -> np.ndarray:
        """``(nx, ny, nz, 3)`` array of voxel center coordinates."""
        axes = [o + self.voxel_size_m * np.arange(n) for o, n in zip(self.origin_m, self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_meta(self) -> dict:
        return {"dims": list(self.dims), "voxel_size_m": self.voxel_size_m, "origin_m": list(self.origin_m)}


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    center: tuple
    mu_value: float
    half_extents: Optional[tuple] = None
    radius: Optional[float] = None
    axis: Optional[tuple] = None
    height: Optional[float] = None

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidArgument(f"unknown shape kind {self.kind!r}")
        if self.mu_value < 0:
            raise InvalidArgument("mu_value must be >= 0")
        if self.kind == "box":
            if self.half_extents is None or len(self.half_extents) != 3 or min(self.half_extents) <= 0:
                raise InvalidArgument("box needs three positive half_extents")
        else:
            if self.radius is None or self.radius <= 0:
                raise InvalidArgument(f"{self.kind} needs a positive radius")
        if self.kind == "cylinder":
            if self.height is None or self.height <= 0:
                raise InvalidArgument("cylinder needs a positive height")
            if self.axis is None or not np.any(self.axis):
                raise InvalidArgument("cylinder needs a nonzero axis")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of points (``(..., 3)``) inside the closed shape."""
        rel = pts - np.asarray(self.center, dtype=float)
        if self.kind == "box":
            return np.all(np.abs(rel) <= np.asarray(self.half_extents, dtype=float), axis=-1)
        if self.kind == "sphere":
            return np.sum(rel * rel, axis=-1) <= self.radius ** 2
        a = np.asarray(self.axis, dtype=float)
        a = a / np.linalg.norm(a)
        along = rel @ a
        radial2 = np.sum(rel * rel, axis=-1) - along ** 2
        return (np.abs(along) <= 0.5 * self.height) & (radial2 <= self.radius ** 2)

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        d = dict(d)
        for key in ("center", "half_extents", "axis"):
            if d.get(key) is not None:
                d[key] = tuple(float(x) for x in d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Phantom:
    grid: Grid
    mu: np.ndarray  # shape grid.dims, 1/m

    def __post_init__(self):
        if tuple(self.mu.shape) != tuple(self.grid.dims):
            raise InvalidArgument("mu shape does not match grid dims")
        if np.any(self.mu < 0):
            raise InvalidArgument("attenuation must be non-negative")

    @property
    def dims(self):
        return self.grid.dims

    @property
    def voxel_size_m(self):
        return self.grid.voxel_size_m

    @property
    def origin_m(self):
        return self.grid.origin_m


def build_phantom(dims, voxel_size_m, origin_m, shapes: Sequence[ShapeSpec] = ()) -> Phantom:
    """Rasterize shapes at voxel centers; later shapes overwrite earlier ones."""
    if not voxel_size_m > 0:
        raise InvalidArgument("voxel_size_m must be positive")
    grid = Grid(tuple(int(n) for n in dims), float(voxel_size_m), tuple(float(x) for x in origin_m))
    mu = np.zeros(grid.dims)
    centers = grid.voxel_centers()
    for shape in shapes:
        mu[shape.contains(centers)] = shape.mu_value
    return Phantom(grid, mu)


def write_phantom(path, phantom: Phantom):
    return io.write_raw(path, phantom.mu, phantom.grid.to_meta())


def read_phantom(path) -> Phantom:
    mu, meta = io.read_raw(path)
    grid = Grid(tuple(meta["dims"]), meta["voxel_size_m"], tuple(meta["origin_m"]))
    return Phantom(grid, mu)


# --- ray traversal -----------------------------------------------------------

_RAY_CHUNK = 2048


def _siddon_chunk(grid: Grid, p0: np.ndarray, p1: np.ndarray):
    d = p1 - p0
    lo, hi = grid.lower, grid.upper
    vs = grid.voxel_size_m
    n_rays = p0.shape[0]

    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - p0) / d
        t_hi = (hi - p0) / d
    t_near = np.minimum(t_lo, t_hi)
    t_far = np.maximum(t_lo, t_hi)
    flat = d == 0
    inside = (p0 >= lo) & (p0 <= hi)
    t_near = np.where(flat, np.where(inside, -np.inf, np.inf), t_near)
    t_far = np.where(flat, np.where(inside, np.inf, -np.inf), t_far)
    a_min = np.maximum(0.0, t_near.max(axis=1))
    a_max = np.minimum(1.0, t_far.min(axis=1))
    miss = ~(a_max > a_min)
    a_min = np.where(miss, 0.0, a_min)
    a_max = np.where(miss, 0.0, a_max)

    parts = [a_min[:, None], a_max[:, None]]
    for ax in range(3):
        planes = lo[ax] + vs * np.arange(grid.dims[ax] + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (planes[None, :] - p0[:, ax:ax + 1]) / d[:, ax:ax + 1]
        a = np.where(flat[:, ax:ax + 1], a_min[:, None], a)
        parts.append(a)
    alphas = np.concatenate(parts, axis=1)
    alphas = np.clip(alphas, a_min[:, None], np.maximum(a_min, a_max)[:, None])
    alphas.sort(axis=1)

    seg = np.diff(alphas, axis=1)
    mid = 0.5 * (alphas[:, 1:] + alphas[:, :-1])
    pts = p0[:, None, :] + mid[..., None] * d[:, None, :]
    idx = np.floor((pts - lo) / vs).astype(np.int64)
    dims = np.asarray(grid.dims)
    ok = (seg > 0) & np.all((idx >= 0) & (idx < dims), axis=-1)
    ray_len = np.linalg.norm(d, axis=1)

    rays = np.broadcast_to(np.arange(n_rays)[:, None], seg.shape)[ok]
    nx, ny, nz = grid.dims
    flat_idx = (idx[..., 0] * ny + idx[..., 1]) * nz + idx[..., 2]
    lengths = (seg * ray_len[:, None])[ok]
    return rays, flat_idx[ok], lengths


def ray_segments(grid: Grid, p0, p1):
    """Exact voxel traversal of segments ``p0[i] -> p1[i]``.

    Returns ``(ray_index, flat_voxel_index, length_m)`` triplets, one per
    traversed voxel, with voxels flattened in C order of ``grid.dims``.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    out_r, out_v, out_l = [], [], []
    for start in range(0, p0.shape[0], _RAY_CHUNK):
        r, v, ln = _siddon_chunk(grid, p0[start:start + _RAY_CHUNK], p1[start:start + _RAY_CHUNK])
        out_r.append(r + start)
        out_v.append(v)
        out_l.append(ln)
    if not out_r:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    return np.concatenate(out_r), np.concatenate(out_v), np.concatenate(out_l)


def ray_matrix(grid: Grid, p0, p1) -> sp.csr_matrix:
    """Sparse intersection-length matrix, rays x voxels."""
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    r, v, ln = ray_segments(grid, p0, p1)
    return sp.csr_matrix((ln, (r, v)), shape=(p0.shape[0], grid.n_voxels))


def line_integral(phantom: Phantom, p0, p1) -> float:
    """Optical depth along the segment ``p0 -> p1``."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if np.array_equal(p0, p1):
        raise DegenerateGeometry("segment endpoints coincide")
    _, v, ln = ray_segments(phantom.grid, p0, p1)
    return float(np.sum(phantom.mu.ravel()[v] * ln))


# --- projections --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProjectionImage:
    """Transmission image ``values[v, u]`` in [0, 1]."""

    view_id: int
    values: np.ndarray

    @property
    def pixels_u(self) -> int:
        return int(self.values.shape[1])

    @property
    def pixels_v(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class PixelRect:
    """Inclusive pixel index bounds."""

    u0: int
    u1: int
    v0: int
    v1: int

    @property
    def n_pixels(self) -> int:
        return max(0, self.u1 - self.u0 + 1) * max(0, self.v1 - self.v0 + 1)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.u0 + self.u1), 0.5 * (self.v0 + self.v1)


def pixel_centers(view: ViewCandidate) -> np.ndarray:
    """World coordinates of pixel centers, shape ``(pixels_v * pixels_u, 3)`` row-major in (v, u)."""
    det = view.detector
    su = (np.arange(det.pixels_u) - 0.5 * (det.pixels_u - 1)) * det.pixel_u_m
    sv = (np.arange(det.pixels_v) - 0.5 * (det.pixels_v - 1)) * det.pixel_v_m
    vv, uu = np.meshgrid(sv, su, indexing="ij")
    pts = (view.detector_center
           + uu.reshape(-1, 1) * view.detector_u_axis
           + vv.reshape(-1, 1) * view.detector_v_axis)
    return pts


def view_matrix(grid: Grid, view: ViewCandidate) -> sp.csr_matrix:
    """Forward projector for one view: detector pixels x voxels."""
    q = pixel_centers(view)
    src = np.broadcast_to(view.source_pos, q.shape)
    return ray_matrix(grid, src, q)


def simulate_projection(phantom: Phantom, view: ViewCandidate, matrix=None) -> ProjectionImage:
    """Monochromatic noiseless transmission ``exp(-integral of mu)`` at each pixel center."""
    if matrix is None:
        matrix = view_matrix(phantom.grid, view)
    depth = matrix @ phantom.mu.ravel()
    det = view.detector
    values = np.exp(-np.maximum(depth, 0.0)).reshape(det.pixels_v, det.pixels_u)
    return ProjectionImage(view.id, values)


def _pixel_index(coord_m, pixel_m, n):
    return int(np.floor(coord_m / pixel_m + 0.5 * (n - 1) + 0.5))


def project_voi_roi(view: ViewCandidate, voi: Voi) -> PixelRect:
    """Pixel bounding box of the projected VOI sphere, clamped to the detector.

    The box spans the projections of the six axis-extreme points of the sphere.
    """
    det = view.detector
    c = voi.center_array
    uv = project_to_detector(view, c)
    if uv is None:
        raise RoiNotVisible(f"VOI {voi.id} is behind source of view {view.id}")
    iu = _pixel_index(uv[0], det.pixel_u_m, det.pixels_u)
    iv = _pixel_index(uv[1], det.pixel_v_m, det.pixels_v)
    if not (0 <= iu < det.pixels_u and 0 <= iv < det.pixels_v):
        raise RoiNotVisible(f"VOI {voi.id} projects off the detector of view {view.id}")
    us, vs = [iu], [iv]
    for ax in range(3):
        for sgn in (-1.0, 1.0):
            p = c.copy()
            p[ax] += sgn * voi.roi_radius_m
            puv = project_to_detector(view, p)
            if puv is None:
                raise RoiNotVisible(f"VOI {voi.id} sphere reaches behind source of view {view.id}")
            us.append(_pixel_index(puv[0], det.pixel_u_m, det.pixels_u))
            vs.append(_pixel_index(puv[1], det.pixel_v_m, det.pixels_v))
    clamp = lambda x, n: min(max(x, 0), n - 1)  # noqa: E731
    return PixelRect(clamp(min(us), det.pixels_u), clamp(max(us), det.pixels_u),
                     clamp(min(vs), det.pixels_v), clamp(max(vs), det.pixels_v))


def absorption_metric(projection: ProjectionImage, roi: PixelRect) -> float:
    """Absorbed fraction ``1 - mean(transmission)`` over the ROI pixels."""
    if roi.n_pixels == 0:
        raise InvalidArgument("empty ROI")
    if roi.u0 < 0 or roi.v0 < 0 or roi.u1 >= projection.pixels_u or roi.v1 >= projection.pixels_v:
        raise InvalidArgument("ROI extends outside the image")
    patch = projection.values[roi.v0:roi.v1 + 1, roi.u0:roi.u1 + 1]
    return float(min(1.0, max(0.0, 1.0 - patch.mean())))


def write_projections(path, projections: Sequence[ProjectionImage]):
    """Stacked ``(view, v, u)`` transmission file plus sidecar listing view ids."""
    stack = np.stack([p.values for p in projections]) if projections else np.zeros((0, 1, 1))
    return io.write_raw(path, stack, {"view_ids": [int(p.view_id) for p in projections]})


def read_projections(path) -> list[ProjectionImage]:
    stack, meta = io.read_raw(path)
    return [ProjectionImage(int(vid), stack[i]) for i, vid in enumerate(meta["view_ids"])]
