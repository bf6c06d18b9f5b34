"""End-to-end runner: phantom -> candidates -> projections -> coverage -> select -> recon -> evaluate.

Every stage writes its artifacts into the output directory and records a
cache entry keyed by a digest of its inputs (config subset plus upstream
keys). A rerun whose key matches and whose files still hash to the recorded
digests loads the files instead of recomputing. Stage results are always
read back from disk so cached and fresh runs see identical (float32) data.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .completeness import CompletenessConfig, CoverageMatrix, build_coverage_matrix, read_matrix, write_matrix
from .config import PipelineConfig, validate
from .errors import RoiNotVisible, StageFailure
from .geometry import (DetectorSpec, Voi, fibonacci_half_sphere, full_sphere_candidates,
                       tilted_circle_candidates, write_candidates_csv)
from .phantom import (Grid, ShapeSpec, absorption_metric, build_phantom, project_voi_roi, read_phantom,
                      read_projections, simulate_projection, write_phantom, write_projections)
from .recon import RoiMask, Volume, cnr, psnr, read_volume, sart_reconstruct, ssim, write_volume
from .select import (SolverLimits, assemble_problem, bnb_select, brute_force_select, circular_select,
                     greedy_select)

log = logging.getLogger(__name__)

STAGES = ("phantom", "candidates", "project", "coverage", "select", "recon", "evaluate")
VOLATILE_KEYS = ("wall_time_s",)


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def strip_volatile(doc):
    """Drop timing fields so two reports can be compared byte for byte."""
    if isinstance(doc, dict):
        return {k: strip_volatile(v) for k, v in doc.items() if k not in VOLATILE_KEYS}
    if isinstance(doc, list):
        return [strip_volatile(v) for v in doc]
    return doc


def make_views(cfg: PipelineConfig):
    """Pool candidates followed by the reference circle (full-sphere sets only).

    Returns ``(views, pool_size, circle_id)``; view ids equal list positions.
    """
    d = cfg.detector
    det = DetectorSpec(d.width_m, d.height_m, d.pixels_u, d.pixels_v)
    c = cfg.candidates
    if c.kind == "full_sphere":
        pool = full_sphere_candidates(c.n, c.sod_m, c.sdd_m, det)
        n_ref = cfg.circular.n_views or cfg.k
        tilt = cfg.circular.tilt_deg
        ref = tilted_circle_candidates(1, [tilt, tilt], n_ref, cfg.circular.arc_deg, c.sdd_m, c.sod_m, det,
                                       id_offset=len(pool))
        return pool + ref, len(pool), 0
    pool = tilted_circle_candidates(c.n_tilts, c.tilt_range_deg, c.n_per_circle, c.arc_deg, c.sdd_m,
                                    c.sod_m, det, start_deg=c.start_deg)
    circle = cfg.circular.circle_id
    if circle is None:
        tilts = np.linspace(c.tilt_range_deg[0], c.tilt_range_deg[1], c.n_tilts)
        circle = int(np.argmin(np.abs(tilts)))
    return pool, len(pool), circle


def make_vois(cfg: PipelineConfig):
    return [Voi(v.id, tuple(float(x) for x in v.center), float(v.roi_radius_m)) for v in cfg.vois]


def phantom_grid(cfg: PipelineConfig) -> Grid:
    p = cfg.phantom
    if p.origin_m is None:
        return Grid.centered(p.dims, p.voxel_size_m)
    return Grid(tuple(p.dims), float(p.voxel_size_m), tuple(float(x) for x in p.origin_m))


def recon_grid(cfg: PipelineConfig) -> Grid:
    r = cfg.recon
    if r.dims is None:
        return phantom_grid(cfg)
    return Grid.centered(r.dims, r.voxel_size_m)


def compute_absorption(projections, views, vois) -> np.ndarray:
    """Per-view mean absorbed fraction over the projected VOI boxes.

    A view that cannot see some VOI gets absorption 1.0.
    """
    out = np.zeros(len(views))
    for i, (proj, view) in enumerate(zip(projections, views)):
        vals = []
        for voi in vois:
            try:
                vals.append(absorption_metric(proj, project_voi_roi(view, voi)))
            except RoiNotVisible:
                vals.append(1.0)
        out[i] = float(np.mean(vals))
    return out


def build_matrix(views, vois, cfg: PipelineConfig):
    """Stacked coverage matrix; each VOI uses its own sample count and angular gap."""
    blocks, offsets, start = [], [], 0
    for v, voi in zip(cfg.vois, vois):
        sampling = fibonacci_half_sphere(v.n_samples, v.id)
        m = build_coverage_matrix(views, [voi], [sampling], CompletenessConfig(v.delta_gamma_rad))
        blocks.append(m.to_dense())
        offsets.append(start)
        start += m.n_samples
    return CoverageMatrix.from_dense(np.hstack(blocks), tuple(offsets))


class _Runner:
    def __init__(self, cfg: PipelineConfig, out_dir, threads: int = 1):
        validate(cfg)
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = max(1, int(threads))
        self.stages = []
        self.artifacts = {}
        self.keys = {}

    # -- bookkeeping -----------------------------------------------------------
    def _record_path(self, label):
        return self.out / ".cache" / f"{label}.json"

    def _cached(self, label, key, files):
        rec_path = self._record_path(label)
        if not rec_path.exists():
            return False
        try:
            rec = io.read_json(rec_path)
        except (OSError, ValueError):
            return False
        if rec.get("key") != key or sorted(rec.get("files", {})) != sorted(files):
            return False
        for name, sha in rec["files"].items():
            p = self.out / name
            if not p.exists() or io.sha256_file(p) != sha:
                return False
        return True

    def stage(self, label, key_material, files, produce, load):
        key = digest_of(key_material)
        self.keys[label] = key
        t0 = time.perf_counter()
        entry = {"stage": label, "key": key}
        try:
            hit = self._cached(label, key, files)
            if not hit:
                log.info("stage %s: computing", label)
                produce()
                rec = {"key": key, "files": {f: io.sha256_file(self.out / f) for f in files}}
                io.write_json(self._record_path(label), rec)
            else:
                log.info("stage %s: cache hit", label)
            result = load()
        except Exception as exc:
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                         wall_time_s=time.perf_counter() - t0, cache_hit=False)
            self.stages.append(entry)
            self.write_manifest(status="failed")
            raise StageFailure(label, exc) from exc
        entry.update(status="ok", cache_hit=hit, wall_time_s=time.perf_counter() - t0)
        self.stages.append(entry)
        for f in files:
            self.artifacts[f] = {"path": f, "sha256": io.sha256_file(self.out / f), "stage": label}
        rec_name = str(self._record_path(label).relative_to(self.out))
        self.artifacts[rec_name] = {"path": rec_name, "sha256": io.sha256_file(self._record_path(label)),
                                    "stage": label}
        return result

    def write_manifest(self, status="ok", extra_files: Sequence[str] = ()):
        for f in extra_files:
            self.artifacts[f] = {"path": f, "sha256": io.sha256_file(self.out / f), "stage": "report"}
        doc = {
            "name": self.cfg.name,
            "config_digest": digest_of(self.cfg.to_dict()),
            "status": status,
            "artifacts": [self.artifacts[k] for k in sorted(self.artifacts)],
            "stages": self.stages,
            "created_unix": time.time(),
        }
        io.write_json(self.out / "manifest.json", doc)
        return doc

    # -- stages ----------------------------------------------------------------
    def phantom(self):
        p = self.cfg.phantom
        grid = phantom_grid(self.cfg)
        shapes = [ShapeSpec.from_dict(s) for s in p.shapes]

        def produce():
            write_phantom(self.out / "phantom.raw", build_phantom(grid.dims, grid.voxel_size_m, grid.origin_m, shapes))

        return self.stage("phantom", {"phantom": self.cfg.to_dict()["phantom"]},
                          ["phantom.raw", "phantom.raw.json"], produce,
                          lambda: read_phantom(self.out / "phantom.raw"))

    def candidates(self):
        d = self.cfg.to_dict()
        material = {"detector": d["detector"], "candidates": d["candidates"], "circular": d["circular"],
                    "k": self.cfg.k}
        views, n_pool, circle = make_views(self.cfg)

        def produce():
            write_candidates_csv(self.out / "candidates.csv", views)
            io.write_json(self.out / "candidates.json", {
                "pool_size": n_pool, "circular_circle_id": circle,
                "circle_ids": [v.circle_id for v in views]})

        def load():
            meta = io.read_json(self.out / "candidates.json")
            if len(meta["circle_ids"]) != len(views) or meta["pool_size"] != n_pool:
                raise ValueError("candidate files disagree with the configuration")
            return views, n_pool, circle

        return self.stage("candidates", material, ["candidates.csv", "candidates.json"], produce, load)

    def project(self, phantom, views):
        def produce():
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                projs = list(ex.map(lambda v: simulate_projection(phantom, v), views))
            write_projections(self.out / "projections.raw", projs)

        material = {"phantom": self.keys["phantom"], "candidates": self.keys["candidates"]}
        return self.stage("project", material, ["projections.raw", "projections.raw.json"], produce,
                          lambda: read_projections(self.out / "projections.raw"))

    def coverage(self, views, projections):
        vois = make_vois(self.cfg)

        def produce():
            write_matrix(self.out / "coverage.bin", build_matrix(views, vois, self.cfg))
            buf = _io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["candidate", "absorption"])
            for v, a in zip(views, compute_absorption(projections, views, vois)):
                w.writerow([v.id, repr(float(a))])
            io.atomic_write_text(self.out / "absorption.csv", buf.getvalue())

        def load():
            with open(self.out / "absorption.csv", newline="") as fh:
                absorption = np.array([float(r["absorption"]) for r in csv.DictReader(fh)])
            return read_matrix(self.out / "coverage.bin"), absorption

        material = {"candidates": self.keys["candidates"], "project": self.keys["project"],
                    "vois": self.cfg.to_dict()["vois"]}
        return self.stage("coverage", material, ["coverage.bin", "absorption.csv"], produce, load)

    def select(self, solver, views, n_pool, circle, matrix, absorption):
        cfg = self.cfg
        limits = SolverLimits(**cfg.to_dict()["limits"])
        name = f"solution_{solver}.json"

        def produce():
            if solver == "circular":
                sol = circular_select(views, matrix, cfg.k, circle)
            else:
                problem = assemble_problem(matrix.take(range(n_pool)), absorption[:n_pool], cfg.alpha, cfg.k)
                if solver == "greedy":
                    sol = greedy_select(problem)
                elif solver == "ip":
                    sol = bnb_select(problem, limits)
                else:
                    sol = brute_force_select(problem)
            doc = sol.to_dict()
            doc["alpha"] = cfg.alpha
            doc["k"] = cfg.k
            io.write_json(self.out / name, doc)

        material = {"coverage": self.keys["coverage"], "solver": solver, "alpha": cfg.alpha, "k": cfg.k,
                    "limits": cfg.to_dict()["limits"] if solver == "ip" else None,
                    "circle": circle if solver == "circular" else None}
        return self.stage(f"select[{solver}]", material, [name], produce, lambda: io.read_json(self.out / name))

    def recon(self, label, view_ids, views, projections):
        cfg = self.cfg
        grid = recon_grid(cfg)
        name = f"recon_{label}.raw"
        ids = sorted(int(i) for i in view_ids)

        def produce():
            chosen = [views[i] for i in ids]
            projs = [projections[i] for i in ids]
            vol = sart_reconstruct(projs, chosen, grid, cfg.recon.n_iters, cfg.recon.relaxation)
            write_volume(self.out / name, vol)

        material = {"project": self.keys["project"], "candidates": self.keys["candidates"],
                    "views": ids, "recon": cfg.to_dict()["recon"]}
        return self.stage(f"recon[{label}]", material, [name, name + ".json"], produce,
                          lambda: read_volume(self.out / name))

    def evaluate(self, solver, solution_doc, volume, reference):
        cfg = self.cfg
        name = f"report_{solver}.json"
        grid = volume.grid

        def produce():
            roi = np.zeros(grid.dims, dtype=bool)
            shell = np.zeros(grid.dims, dtype=bool)
            for v in cfg.vois:
                r = v.roi_radius_m
                roi |= RoiMask.sphere(grid, v.center, r).mask
                shell |= RoiMask.shell(grid, v.center, cfg.evaluation.background_inner * r,
                                       cfg.evaluation.background_outer * r).mask
            roi_m, bg_m = RoiMask(grid, roi), RoiMask(grid, shell & ~roi)
            cnr_value = cnr(volume, roi_m, bg_m)
            doc = dict(solution_doc)
            doc["evaluation"] = {
                "reference": cfg.recon.reference,
                "ssim": ssim(reference, volume, roi_m),
                "psnr_db": psnr(reference, volume, roi_m),
                "cnr": cnr_value,
                "cnr_infinite": bool(np.isinf(cnr_value)),
                "roi_voxels": roi_m.count,
                "background_voxels": bg_m.count,
            }
            io.write_json(self.out / name, doc)

        material = {"solution": digest_of(strip_volatile(solution_doc)), "recon": self.keys[f"recon[{solver}]"],
                    "reference": self.keys.get("recon[reference]", self.keys["phantom"]),
                    "evaluation": cfg.to_dict()["evaluation"], "vois": cfg.to_dict()["vois"]}
        return self.stage(f"evaluate[{solver}]", material, [name], produce, lambda: io.read_json(self.out / name))

    # -- driver ----------------------------------------------------------------
    def run(self, solvers, until="evaluate"):
        stop = STAGES.index(until)
        phantom = self.phantom()
        if stop < 1:
            return {}
        views, n_pool, circle = self.candidates()
        if stop < 2:
            return {}
        projections = self.project(phantom, views)
        if stop < 3:
            return {}
        matrix, absorption = self.coverage(views, projections)
        if stop < 4:
            return {}
        solutions = {s: self.select(s, views, n_pool, circle, matrix, absorption) for s in solvers}
        if stop < 5:
            return {}
        volumes = {s: self.recon(s, solutions[s]["selected"], views, projections) for s in solvers}
        if self.cfg.recon.reference == "all_views":
            reference = self.recon("reference", range(n_pool), views, projections)
        else:
            reference = Volume(recon_grid(self.cfg), phantom.mu) if recon_grid(self.cfg) == phantom.grid \
                else Volume(recon_grid(self.cfg), _resample(phantom, recon_grid(self.cfg)))
        if stop < 6:
            return {}
        return {s: self.evaluate(s, solutions[s], volumes[s], reference) for s in solvers}


def _resample(phantom, grid: Grid) -> np.ndarray:
    """Nearest-voxel lookup of the phantom at ``grid`` voxel centers."""
    pts = grid.voxel_centers()
    idx = np.floor((pts - phantom.grid.lower) / phantom.grid.voxel_size_m).astype(int)
    dims = np.asarray(phantom.grid.dims)
    ok = np.all((idx >= 0) & (idx < dims), axis=-1)
    out = np.zeros(grid.dims)
    ii = np.clip(idx, 0, dims - 1)
    out[ok] = phantom.mu[ii[..., 0], ii[..., 1], ii[..., 2]][ok]
    return out


def run_pipeline(cfg: PipelineConfig, out_dir=None, solvers: Optional[Sequence[str]] = None,
                 until: str = "evaluate", threads: int = 1) -> dict:
    """Run the stages up to ``until`` for the given solvers; returns the manifest.

    The reports (``report_<solver>.json``) are attached under the ``reports`` key
    of the returned manifest (not of the file on disk).
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    runner = _Runner(cfg, out_dir, threads)
    reports = runner.run(list(solvers) if solvers else [cfg.solver], until)
    manifest = runner.write_manifest()
    manifest["reports"] = reports
    return manifest


COMPARISON_COLUMNS = ("approach", "ssim", "psnr_db", "cnr", "coverage_fraction", "gap", "wall_time_s")


def compare_solvers(cfg: PipelineConfig, out_dir=None, threads: int = 1) -> list[dict]:
    """Run every solver in ``cfg.solvers`` on one problem and write ``comparison.csv``."""
    runner = _Runner(cfg, out_dir, threads)
    reports = runner.run(list(cfg.solvers))
    rows = []
    for s in cfg.solvers:
        rep = reports[s]
        ev = rep["evaluation"]
        rows.append({"approach": s, "ssim": ev["ssim"], "psnr_db": ev["psnr_db"], "cnr": ev["cnr"],
                     "coverage_fraction": rep["fraction"], "gap": rep["gap"], "wall_time_s": rep["wall_time_s"]})
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COMPARISON_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    io.atomic_write_text(runner.out / "comparison.csv", buf.getvalue())
    runner.write_manifest(extra_files=["comparison.csv"])
    return rows
