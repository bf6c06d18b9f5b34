"""Coverage-optimal selection of CT views.

Views are chosen from a candidate set to maximize how many sampled Radon
plane normals around voxels of interest they cover, after discarding views
whose projected region absorbs too much.
"""

from .completeness import CompletenessConfig, CoverageMatrix, build_coverage_matrix, coverage_of, coverage_row
from .config import PipelineConfig, load_config
from .geometry import (DetectorSpec, SphereSampling, UnitVec, ViewCandidate, Voi, detector_hit,
                       fibonacci_half_sphere, full_sphere_candidates, tilted_circle_candidates, view_direction)
from .phantom import (Phantom, ShapeSpec, absorption_metric, build_phantom, line_integral, project_voi_roi,
                      simulate_projection)
from .pipeline import compare_solvers, run_pipeline
from .recon import RoiMask, Volume, cnr, psnr, sart_reconstruct, ssim
from .select import (SelectionProblem, Solution, SolverLimits, assemble_problem, bnb_select, brute_force_select,
                     circular_select, greedy_select, optimality_gap)

__version__ = "0.1.0"

__all__ = [
    "CompletenessConfig", "CoverageMatrix", "build_coverage_matrix", "coverage_of", "coverage_row",
    "DetectorSpec", "SphereSampling", "UnitVec", "ViewCandidate", "Voi", "detector_hit", "fibonacci_half_sphere",
    "full_sphere_candidates", "tilted_circle_candidates", "view_direction",
    "Phantom", "ShapeSpec", "absorption_metric", "build_phantom", "line_integral", "project_voi_roi",
    "simulate_projection",
    "RoiMask", "Volume", "cnr", "psnr", "sart_reconstruct", "ssim",
    "SelectionProblem", "Solution", "SolverLimits", "assemble_problem", "bnb_select", "brute_force_select",
    "circular_select", "greedy_select", "optimality_gap",
    "PipelineConfig", "load_config", "compare_solvers", "run_pipeline",
]
