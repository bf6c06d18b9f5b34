"""SART reconstruction on a voxel grid and ROI image-quality metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import io
from .errors import InvalidArgument
from .geometry import ViewCandidate
from .phantom import Grid, ProjectionImage, view_matrix

TRANSMISSION_FLOOR = 1e-12
SSIM_WINDOW = 8


@dataclass(frozen=True, eq=False)
class Volume:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.grid.dims):
            raise InvalidArgument("values shape does not match grid dims")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgument("volume values must be finite")


@dataclass(frozen=True, eq=False)
class RoiMask:
    grid: Grid
    mask: np.ndarray

    @classmethod
    def sphere(cls, grid: Grid, center, radius_m) -> "RoiMask":
        rel = grid.voxel_centers() - np.asarray(center, dtype=float)
        return cls(grid, np.sum(rel * rel, axis=-1) <= radius_m ** 2)

    @classmethod
    def shell(cls, grid: Grid, center, r_in_m, r_out_m) -> "RoiMask":
        d2 = np.sum((grid.voxel_centers() - np.asarray(center, dtype=float)) ** 2, axis=-1)
        return cls(grid, (d2 > r_in_m ** 2) & (d2 <= r_out_m ** 2))

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def write_volume(path, volume: Volume):
    return io.write_raw(path, volume.values, volume.grid.to_meta())


def read_volume(path) -> Volume:
    values, meta = io.read_raw(path)
    return Volume(Grid(tuple(meta["dims"]), meta["voxel_size_m"], tuple(meta["origin_m"])), values)


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=float)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def sart_reconstruct(
    projections: Sequence[ProjectionImage],
    views: Sequence[ViewCandidate],
    grid: Grid,
    n_iters: int = 10,
    relaxation: float = 0.5,
    history: Optional[list] = None,
    matrices: Optional[dict] = None,
) -> Volume:
    """Simultaneous algebraic reconstruction, one view at a time.

    Transmissions become line integrals ``-ln(max(T, 1e-12))``. Each sweep
    visits views in ascending id order and applies
    ``x += relaxation * A^T((p - A x) / row_sum) / col_sum`` with the same
    ray-traversal operator used by the projector; negatives are clamped to 0
    after every sweep.

    If ``history`` is a list, one entry per sweep is appended:
    ``{"total": ||A x - p||, "per_view": [...]}``.
    """
    if n_iters < 1:
        raise InvalidArgument("n_iters must be >= 1")
    if not (0 < relaxation <= 1):
        raise InvalidArgument("relaxation must be in (0, 1]")
    by_id = {v.id: v for v in views}
    if len(by_id) != len(views) or sorted(by_id) != sorted(p.view_id for p in projections):
        raise InvalidArgument("projections and views must carry the same set of ids")

    order = sorted(projections, key=lambda p: p.view_id)
    systems = []
    for proj in order:
        view = by_id[proj.view_id]
        a = matrices.get(view.id) if matrices is not None else None
        if a is None:
            a = view_matrix(grid, view)
        p = -np.log(np.maximum(proj.values.ravel(), TRANSMISSION_FLOOR))
        row = np.asarray(a.sum(axis=1)).ravel()
        col = np.asarray(a.sum(axis=0)).ravel()
        systems.append((a, a.T.tocsr(), p, row, col))

    x = np.zeros(grid.n_voxels)
    for _ in range(n_iters):
        for a, at, p, row, col in systems:
            resid = _safe_div(p - a @ x, row)
            x += relaxation * _safe_div(at @ resid, col)
        np.maximum(x, 0.0, out=x)
        if history is not None:
            per_view = [float(np.linalg.norm(a @ x - p)) for a, _, p, _, _ in systems]
            history.append({"total": float(math.sqrt(sum(r * r for r in per_view))), "per_view": per_view})
    return Volume(grid, x.reshape(grid.dims))


# --- metrics -------------------------------------------------------------------

def _check_pair(reference: Volume, test: Volume, roi: RoiMask):
    if reference.grid != test.grid or roi.grid != reference.grid:
        raise InvalidArgument("reference, test and ROI must share one grid")
    if roi.count == 0:
        raise InvalidArgument("ROI is empty")


def psnr(reference: Volume, test: Volume, roi: RoiMask) -> float:
    """PSNR in dB over the ROI, peak = max |reference| in the ROI; ``inf`` when identical."""
    _check_pair(reference, test, roi)
    ref = reference.values[roi.mask]
    peak = float(np.max(np.abs(ref)))
    if peak == 0.0:
        raise InvalidArgument("reference is zero over the ROI")
    mse = float(np.mean((ref - test.values[roi.mask]) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _box_mean(a: np.ndarray, w: int) -> np.ndarray:
    """Mean over every fully contained ``w``-wide cube (valid mode)."""
    s = np.pad(a, [(1, 0)] * 3).cumsum(0).cumsum(1).cumsum(2)
    total = (s[w:, w:, w:] - s[:-w, w:, w:] - s[w:, :-w, w:] - s[w:, w:, :-w]
             + s[:-w, :-w, w:] + s[:-w, w:, :-w] + s[w:, :-w, :-w] - s[:-w, :-w, :-w])
    return total / float(w ** 3)


def ssim(reference: Volume, test: Volume, roi: RoiMask, window: int = SSIM_WINDOW) -> float:
    """Mean local SSIM over the ROI bounding box with a uniform cubic window.

    The dynamic range is ``max - min`` of the reference over the ROI; a flat
    reference falls back to its peak magnitude (or 1).
    """
    _check_pair(reference, test, roi)
    idx = np.argwhere(roi.mask)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    if np.any(hi - lo < window):
        raise InvalidArgument(f"ROI bounding box {tuple(hi - lo)} smaller than the {window}-voxel window")
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    x = reference.values[sl].astype(float)
    y = test.values[sl].astype(float)

    ref_roi = reference.values[roi.mask]
    dyn = float(ref_roi.max() - ref_roi.min())
    if dyn == 0.0:
        dyn = float(np.max(np.abs(ref_roi))) or 1.0
    c1 = (0.01 * dyn) ** 2
    c2 = (0.03 * dyn) ** 2

    mx, my = _box_mean(x, window), _box_mean(y, window)
    vx = np.maximum(_box_mean(x * x, window) - mx * mx, 0.0)
    vy = np.maximum(_box_mean(y * y, window) - my * my, 0.0)
    cxy = _box_mean(x * y, window) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean())


def cnr(volume: Volume, roi: RoiMask, background: RoiMask) -> float:
    """``|mean(roi) - mean(background)| / std(background)`` (population std).

    A constant background yields ``inf`` and a ``RuntimeWarning``.
    """
    if roi.grid != volume.grid or background.grid != volume.grid:
        raise InvalidArgument("masks must share the volume grid")
    if roi.count == 0 or background.count == 0:
        raise InvalidArgument("ROI and background must be non-empty")
    if np.any(roi.mask & background.mask):
        raise InvalidArgument("ROI and background overlap")
    a = volume.values[roi.mask]
    b = volume.values[background.mask]
    sd = float(np.std(b))
    diff = abs(float(a.mean()) - float(b.mean()))
    if sd == 0.0:
        warnings.warn("background is constant; CNR is infinite", RuntimeWarning, stacklevel=2)
        return math.inf
    return diff / sd
