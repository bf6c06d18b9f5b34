import time

import numpy as np
import pytest

from ctcover.geometry import DetectorSpec, full_sphere_candidates
from ctcover.phantom import Grid, ShapeSpec, build_phantom, simulate_projection, view_matrix
from ctcover.recon import RoiMask, Volume, sart_reconstruct

ACCEPTANCE_LINES = []


def box(center, half, mu):
    return ShapeSpec("box", tuple(center), mu, half_extents=tuple(half))


def shapes_phantom(n=32, voxel=0.001):
    shapes = [
        box((0, 0, 0), (0.014, 0.014, 0.014), 10.0),
        box((0, 0, 0), (0.012, 0.012, 0.012), 0.0),
        ShapeSpec("cylinder", (0.003, 0.0, 0.0), 40.0, radius=0.004, axis=(0, 0, 1), height=0.018),
        ShapeSpec("sphere", (-0.006, 0.005, 0.004), 60.0, radius=0.003),
        box((-0.005, -0.006, -0.005), (0.002, 0.003, 0.002), 30.0),
    ]
    return build_phantom((n,) * 3, voxel, Grid.centered((n,) * 3, voxel).origin_m, shapes)


@pytest.fixture(scope="session")
def sart_case():
    """32^3 shapes phantom reconstructed from 60 full-sphere views (20 sweeps)."""
    t0 = time.perf_counter()
    phantom = shapes_phantom()
    views = full_sphere_candidates(60, 0.1, 0.2, DetectorSpec(0.12, 0.12, 48, 48))
    mats = {v.id: view_matrix(phantom.grid, v) for v in views}
    projs = [simulate_projection(phantom, v, mats[v.id]) for v in views]
    history = []
    vol = sart_reconstruct(projs, views, phantom.grid, n_iters=20, relaxation=0.5, history=history,
                           matrices=mats)
    return {
        "reference": Volume(phantom.grid, phantom.mu),
        "recon": vol,
        "zero": Volume(phantom.grid, np.zeros(phantom.grid.dims)),
        "roi": RoiMask.sphere(phantom.grid, (0, 0, 0), 0.012),
        "history": history,
        "elapsed": time.perf_counter() - t0,
    }


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
