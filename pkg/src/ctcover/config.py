"""Pipeline configuration: strict JSON schema mapped onto dataclasses.

Unknown keys anywhere in the document are rejected, and cross-field checks
(k against the candidate count, alpha range, ROI size) run before any compute.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigError

SOLVER_NAMES = ("circular", "greedy", "ip", "oracle")


@dataclass
class PhantomConfig:
    dims: list
    voxel_size_m: float
    shapes: list = field(default_factory=list)
    origin_m: Optional[list] = None  # None: grid centered on the isocenter


@dataclass
class DetectorConfig:
    width_m: float
    height_m: float
    pixels_u: int
    pixels_v: int


@dataclass
class CandidateConfig:
    kind: str  # "full_sphere" | "tilted_circles"
    sod_m: float
    sdd_m: float
    n: Optional[int] = None
    n_tilts: Optional[int] = None
    tilt_range_deg: Optional[list] = None
    n_per_circle: Optional[int] = None
    arc_deg: float = 360.0
    start_deg: float = 0.0


@dataclass
class CircularConfig:
    """Circular baseline.

    For tilted-circle candidate sets the baseline runs on ``circle_id`` (default:
    the circle with tilt closest to 0). For full-sphere sets a separate reference
    circle of ``n_views`` views (default ``k``) at ``tilt_deg`` is generated.
    """

    circle_id: Optional[int] = None
    n_views: Optional[int] = None
    tilt_deg: float = 0.0
    arc_deg: float = 360.0


@dataclass
class VoiConfig:
    id: str
    center: list
    roi_radius_m: float
    n_samples: int
    delta_gamma_rad: float


@dataclass
class LimitsConfig:
    stall_window_s: Optional[float] = 20.0
    min_improvement: float = 1e-8
    max_time_s: Optional[float] = None
    max_nodes: Optional[int] = None


@dataclass
class ReconConfig:
    n_iters: int = 10
    relaxation: float = 0.5
    reference: str = "all_views"  # or "phantom"
    dims: Optional[list] = None  # None: reuse the phantom grid
    voxel_size_m: Optional[float] = None


@dataclass
class EvaluationConfig:
    background_inner: float = 1.5  # shell radii as multiples of the VOI ROI radius
    background_outer: float = 2.5


@dataclass
class PipelineConfig:
    phantom: PhantomConfig
    detector: DetectorConfig
    candidates: CandidateConfig
    vois: list
    alpha: float
    k: int
    name: str = "run"
    solver: str = "ip"
    solvers: list = field(default_factory=lambda: ["circular", "greedy", "ip"])
    circular: CircularConfig = field(default_factory=CircularConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output_dir: str = "out"
    seed: int = 0  # reserved; the default path is deterministic

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def n_pool(self) -> int:
        c = self.candidates
        return c.n if c.kind == "full_sphere" else c.n_tilts * c.n_per_circle


_NESTED = {
    "phantom": PhantomConfig,
    "detector": DetectorConfig,
    "candidates": CandidateConfig,
    "circular": CircularConfig,
    "limits": LimitsConfig,
    "recon": ReconConfig,
    "evaluation": EvaluationConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    required = {f.name for f in dataclasses.fields(cls)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}
    missing = sorted(required - set(data))
    if missing:
        raise ConfigError(f"{where}: missing key(s) {missing}")
    kwargs = {}
    for key, value in data.items():
        if cls is PipelineConfig and key in _NESTED:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif cls is PipelineConfig and key == "vois":
            if not isinstance(value, list):
                raise ConfigError(f"{where}.vois: expected a list")
            value = [_build(VoiConfig, v, f"{where}.vois[{i}]") for i, v in enumerate(value)]
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:  # pragma: no cover - guarded by the key checks above
        raise ConfigError(f"{where}: {exc}") from exc


def _positive(value, where):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not value > 0 or not math.isfinite(value):
        raise ConfigError(f"{where} must be a positive number")


def validate(cfg: PipelineConfig) -> None:
    p = cfg.phantom
    if not (isinstance(p.dims, list) and len(p.dims) == 3 and all(isinstance(n, int) and n >= 1 for n in p.dims)):
        raise ConfigError("phantom.dims must be three integers >= 1")
    _positive(p.voxel_size_m, "phantom.voxel_size_m")
    for i, s in enumerate(p.shapes):
        if not isinstance(s, dict) or "kind" not in s:
            raise ConfigError(f"phantom.shapes[{i}] must be an object with a kind")
        allowed = {"kind", "center", "mu_value", "half_extents", "radius", "axis", "height"}
        if set(s) - allowed:
            raise ConfigError(f"phantom.shapes[{i}]: unknown key(s) {sorted(set(s) - allowed)}")

    d = cfg.detector
    _positive(d.width_m, "detector.width_m")
    _positive(d.height_m, "detector.height_m")
    if not (isinstance(d.pixels_u, int) and isinstance(d.pixels_v, int) and d.pixels_u >= 1 and d.pixels_v >= 1):
        raise ConfigError("detector pixel counts must be integers >= 1")

    c = cfg.candidates
    if c.kind not in ("full_sphere", "tilted_circles"):
        raise ConfigError(f"candidates.kind must be full_sphere or tilted_circles, got {c.kind!r}")
    _positive(c.sod_m, "candidates.sod_m")
    _positive(c.sdd_m, "candidates.sdd_m")
    if not c.sod_m < c.sdd_m:
        raise ConfigError("candidates.sod_m must be smaller than sdd_m")
    if c.kind == "full_sphere":
        if not isinstance(c.n, int) or c.n < 1:
            raise ConfigError("candidates.n must be an integer >= 1")
    else:
        if not isinstance(c.n_tilts, int) or c.n_tilts < 1 or not isinstance(c.n_per_circle, int) or c.n_per_circle < 1:
            raise ConfigError("candidates.n_tilts and n_per_circle must be integers >= 1")
        if not (isinstance(c.tilt_range_deg, list) and len(c.tilt_range_deg) == 2
                and c.tilt_range_deg[0] <= c.tilt_range_deg[1]):
            raise ConfigError("candidates.tilt_range_deg must be [min, max]")
        if not 0 < c.arc_deg <= 360:
            raise ConfigError("candidates.arc_deg must be in (0, 360]")

    if not cfg.vois:
        raise ConfigError("at least one VOI is required")
    ids = [v.id for v in cfg.vois]
    if len(set(ids)) != len(ids):
        raise ConfigError("VOI ids must be unique")
    for v in cfg.vois:
        _positive(v.roi_radius_m, f"vois[{v.id}].roi_radius_m")
        if not isinstance(v.n_samples, int) or v.n_samples < 1:
            raise ConfigError(f"vois[{v.id}].n_samples must be an integer >= 1")
        if not 0 < v.delta_gamma_rad < math.pi / 2:
            raise ConfigError(f"vois[{v.id}].delta_gamma_rad must lie in (0, pi/2)")
        if not (isinstance(v.center, list) and len(v.center) == 3):
            raise ConfigError(f"vois[{v.id}].center must have three coordinates")

    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    if not isinstance(cfg.k, int) or cfg.k < 1:
        raise ConfigError("k must be an integer >= 1")
    if cfg.k > cfg.n_pool:
        raise ConfigError(f"k={cfg.k} exceeds the {cfg.n_pool} generated candidates")
    if cfg.solver not in SOLVER_NAMES:
        raise ConfigError(f"solver must be one of {SOLVER_NAMES}")
    if not cfg.solvers or any(s not in SOLVER_NAMES for s in cfg.solvers):
        raise ConfigError(f"solvers must be a non-empty subset of {SOLVER_NAMES}")

    circ = cfg.circular
    if c.kind == "tilted_circles":
        if circ.circle_id is not None and not 0 <= circ.circle_id < c.n_tilts:
            raise ConfigError("circular.circle_id out of range")
        if "circular" in cfg.solvers + [cfg.solver] and cfg.k > c.n_per_circle:
            raise ConfigError(f"k={cfg.k} exceeds the {c.n_per_circle} views of one circle")
    elif circ.n_views is not None and circ.n_views < cfg.k:
        raise ConfigError("circular.n_views must be >= k")

    lim = cfg.limits
    for name in ("stall_window_s", "max_time_s", "max_nodes"):
        v = getattr(lim, name)
        if v is not None:
            _positive(v, f"limits.{name}")
    _positive(lim.min_improvement, "limits.min_improvement")

    r = cfg.recon
    if not isinstance(r.n_iters, int) or r.n_iters < 1:
        raise ConfigError("recon.n_iters must be an integer >= 1")
    if not 0 < r.relaxation <= 1:
        raise ConfigError("recon.relaxation must be in (0, 1]")
    if r.reference not in ("all_views", "phantom"):
        raise ConfigError("recon.reference must be all_views or phantom")
    if (r.dims is None) != (r.voxel_size_m is None):
        raise ConfigError("recon.dims and recon.voxel_size_m must be given together")

    e = cfg.evaluation
    if not 1.0 <= e.background_inner < e.background_outer:
        raise ConfigError("evaluation background shell needs 1 <= inner < outer")


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "config")
    validate(cfg)
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``"experiment_b_mini"``."""
    ref = resources.files("ctcover") / "configs" / f"{name}.json"
    return Path(str(ref))


def load_bundled(name: str) -> PipelineConfig:
    return load_config(bundled_config_path(name))
