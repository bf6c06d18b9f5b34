import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctcover.errors import InvalidArgument, RoiNotVisible
from ctcover.geometry import DetectorSpec, Voi, tilted_circle_candidates
from ctcover.phantom import (Grid, PixelRect, ProjectionImage, ShapeSpec, absorption_metric, build_phantom,
                             line_integral, project_voi_roi, read_phantom, read_projections,
                             simulate_projection, write_phantom, write_projections)

VS = 0.001
GRID = Grid.centered((20, 20, 20), VS)  # spans [-0.01, 0.01]^3


def uniform_cube(mu=100.0, grid=GRID):
    return build_phantom(grid.dims, grid.voxel_size_m, grid.origin_m,
                         [ShapeSpec("box", (0, 0, 0), mu, half_extents=(1, 1, 1))])


def slab_chord(p0, p1, lo, hi):
    """Length of the part of segment p0->p1 inside the box [lo, hi] (slab method)."""
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0:
            if not lo[a] <= p0[a] <= hi[a]:
                return 0.0
            continue
        ta, tb = (lo[a] - p0[a]) / d, (hi[a] - p0[a]) / d
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return max(0.0, t1 - t0) * math.dist(p0, p1)


class TestBuildPhantom:
    def test_empty(self):
        ph = build_phantom((4, 5, 6), VS, (0, 0, 0), [])
        assert ph.mu.shape == (4, 5, 6) and not ph.mu.any()

    def test_full_box(self):
        ph = build_phantom((4, 4, 4), VS, (0, 0, 0), [ShapeSpec("box", (0, 0, 0), 50.0, half_extents=(1, 1, 1))])
        assert np.all(ph.mu == 50.0)

    def test_overlap_last_wins(self):
        shapes = [ShapeSpec("box", (0, 0, 0), 10.0, half_extents=(0.006, 0.004, 0.005)),
                  ShapeSpec("sphere", (0.002, 0, 0), 70.0, radius=0.004),
                  ShapeSpec("cylinder", (-0.003, 0, 0), 30.0, radius=0.002, axis=(0, 1, 1), height=0.008)]
        ph = build_phantom(GRID.dims, VS, GRID.origin_m, shapes)
        # per-voxel point-in-shape oracle
        ax = np.asarray(shapes[2].axis, float) / math.sqrt(2)
        for i in range(20):
            for j in range(20):
                for k in range(20):
                    p = np.array(GRID.origin_m) + VS * np.array([i, j, k])
                    val = 0.0
                    if all(abs(p[a]) <= shapes[0].half_extents[a] for a in range(3)):
                        val = 10.0
                    if math.dist(p, (0.002, 0, 0)) <= 0.004:
                        val = 70.0
                    rel = p - np.array([-0.003, 0, 0])
                    along = float(rel @ ax)
                    if abs(along) <= 0.004 and float(rel @ rel) - along ** 2 <= 0.002 ** 2:
                        val = 30.0
                    assert ph.mu[i, j, k] == val

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            build_phantom((2, 2, 2), 0.0, (0, 0, 0), [])
        with pytest.raises(InvalidArgument):
            ShapeSpec("box", (0, 0, 0), -1.0, half_extents=(1, 1, 1))
        with pytest.raises(InvalidArgument):
            ShapeSpec("cone", (0, 0, 0), 1.0)

    def test_io_roundtrip(self, tmp_path):
        ph = build_phantom(GRID.dims, VS, GRID.origin_m, [ShapeSpec("sphere", (0, 0, 0), 12.5, radius=0.005)])
        write_phantom(tmp_path / "p.raw", ph)
        assert (tmp_path / "p.raw").stat().st_size == 4 * 20 ** 3
        back = read_phantom(tmp_path / "p.raw")
        assert back.grid == ph.grid
        np.testing.assert_array_equal(back.mu, ph.mu)


class TestLineIntegral:
    def test_axis_aligned(self):
        ph = uniform_cube(100.0)
        assert line_integral(ph, (-0.05, 0.0003, 0.0002), (0.05, 0.0003, 0.0002)) == pytest.approx(2.0, rel=1e-12)

    def test_partial_segment(self):
        ph = uniform_cube(100.0)
        assert line_integral(ph, (-0.005, 0.0003, 0.0002), (0.05, 0.0003, 0.0002)) == pytest.approx(1.5, rel=1e-12)

    def test_miss(self):
        ph = uniform_cube(100.0)
        assert line_integral(ph, (-0.05, 0.02, 0.0), (0.05, 0.02, 0.0)) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-0.03, 0.03), min_size=6, max_size=6))
    def test_oblique_chord(self, c):
        p0, p1 = np.array(c[:3]), np.array(c[3:])
        if np.linalg.norm(p1 - p0) < 1e-6:
            return
        ph = uniform_cube(100.0)
        expected = 100.0 * slab_chord(p0, p1, GRID.lower, GRID.upper)
        got = line_integral(ph, p0, p1)
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_against_quadrature(self):
        rng = np.random.default_rng(3)
        mu = rng.uniform(0, 80, GRID.dims)
        from ctcover.phantom import Phantom
        ph = Phantom(GRID, mu)
        for _ in range(5):
            p0, p1 = rng.uniform(-0.03, 0.03, 3), rng.uniform(-0.03, 0.03, 3)
            n = 200_000
            t = (np.arange(n) + 0.5) / n
            pts = p0 + t[:, None] * (p1 - p0)
            idx = np.floor((pts - GRID.lower) / VS).astype(int)
            ok = np.all((idx >= 0) & (idx < 20), axis=1)
            quad = mu[idx[ok, 0], idx[ok, 1], idx[ok, 2]].sum() * np.linalg.norm(p1 - p0) / n
            assert line_integral(ph, p0, p1) == pytest.approx(quad, rel=2e-3, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0.05, 0.95))
    def test_symmetry_and_additivity(self, seed, split):
        rng = np.random.default_rng(seed)
        from ctcover.phantom import Phantom
        ph = Phantom(GRID, rng.uniform(0, 50, GRID.dims))
        p0, p1 = rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.02, 0.02, 3)
        whole = line_integral(ph, p0, p1)
        assert whole >= 0
        assert line_integral(ph, p1, p0) == pytest.approx(whole, rel=1e-9, abs=1e-15)
        mid = p0 + split * (p1 - p0)
        parts = line_integral(ph, p0, mid) + line_integral(ph, mid, p1)
        assert parts == pytest.approx(whole, rel=1e-9, abs=1e-15)


DET = DetectorSpec(0.06, 0.06, 16, 16)
VIEWS = tilted_circle_candidates(1, [0, 0], 8, 360, 0.2, 0.1, DET)


class TestProjection:
    def test_empty_phantom(self):
        ph = build_phantom(GRID.dims, VS, GRID.origin_m, [])
        img = simulate_projection(ph, VIEWS[0])
        assert img.values.shape == (16, 16)
        assert np.all(img.values == 1.0)

    def test_opaque_slab(self):
        ph = build_phantom(GRID.dims, VS, GRID.origin_m, [ShapeSpec("box", (0, 0, 0), 1000.0, half_extents=(1, 1, 1))])
        det = DetectorSpec(0.02, 0.02, 8, 8)  # every ray crosses >= 2 cm of material
        view = tilted_circle_candidates(1, [0, 0], 1, 360, 0.2, 0.1, det)[0]
        assert np.all(simulate_projection(ph, view).values <= math.exp(-20))

    def test_central_pixel_analytic(self):
        ph = uniform_cube(30.0)
        det = DetectorSpec(0.06, 0.06, 15, 15)  # odd count: a pixel sits on the axis
        for view in tilted_circle_candidates(1, [0, 0], 5, 360, 0.2, 0.1, det):
            q = view.detector_center
            chord = slab_chord(view.source_pos, q, GRID.lower, GRID.upper)
            val = simulate_projection(ph, view).values[7, 7]
            assert val == pytest.approx(math.exp(-30.0 * chord), rel=1e-6)

    def test_projection_io(self, tmp_path):
        ph = uniform_cube(30.0)
        projs = [simulate_projection(ph, v) for v in VIEWS[:3]]
        write_projections(tmp_path / "p.raw", projs)
        back = read_projections(tmp_path / "p.raw")
        assert [p.view_id for p in back] == [0, 1, 2]
        np.testing.assert_allclose(back[1].values, projs[1].values, rtol=1e-6)


class TestVoiRoi:
    def test_centered(self):
        for view in VIEWS:
            r = project_voi_roi(view, Voi("c", (0, 0, 0), 0.003))
            assert r.center == (7.5, 7.5)

    def test_tiny_radius_single_pixel(self):
        det = DetectorSpec(0.06, 0.06, 15, 15)
        view = tilted_circle_candidates(1, [0, 0], 1, 360, 0.2, 0.1, det)[0]
        r = project_voi_roi(view, Voi("c", (0, 0, 0), 1e-9))
        assert (r.u0, r.u1, r.v0, r.v1) == (7, 7, 7, 7)

    @pytest.mark.parametrize("delta", [0.002, -0.004, 0.006])
    def test_lateral_shift(self, delta):
        view = VIEWS[0]  # source on +x, detector u-axis along +y
        base = project_voi_roi(view, Voi("c", (0, 0, 0), 0.002))
        moved = project_voi_roi(view, Voi("c", tuple(delta * view.detector_u_axis), 0.002))
        mag = 0.2 / 0.1
        expected = mag * delta / DET.pixel_u_m
        assert abs((moved.center[0] - base.center[0]) - expected) <= 1.0

    def test_not_visible(self):
        view = VIEWS[0]
        with pytest.raises(RoiNotVisible):
            project_voi_roi(view, Voi("c", tuple(2 * view.source_pos), 0.001))
        with pytest.raises(RoiNotVisible):
            project_voi_roi(view, Voi("c", tuple(0.05 * view.detector_u_axis), 0.001))


class TestAbsorption:
    def test_empty(self):
        ph = build_phantom(GRID.dims, VS, GRID.origin_m, [])
        img = simulate_projection(ph, VIEWS[0])
        assert absorption_metric(img, project_voi_roi(VIEWS[0], Voi("c", (0, 0, 0), 0.003))) == 0.0

    def test_opaque(self):
        img = ProjectionImage(0, np.full((4, 4), 1e-30))
        assert absorption_metric(img, PixelRect(0, 3, 0, 3)) == pytest.approx(1.0)

    def test_hand_mean(self):
        img = ProjectionImage(0, np.array([[1.0, 0.8], [0.6, 0.6]]))
        assert absorption_metric(img, PixelRect(0, 1, 0, 1)) == pytest.approx(0.25, abs=1e-15)

    def test_empty_roi(self):
        with pytest.raises(InvalidArgument):
            absorption_metric(ProjectionImage(0, np.ones((2, 2))), PixelRect(1, 0, 0, 1))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_monotone_in_mu(self, seed):
        rng = np.random.default_rng(seed)
        from ctcover.phantom import Phantom
        mu = rng.uniform(0, 40, GRID.dims)
        bumped = mu + rng.uniform(0, 20, GRID.dims) * (rng.random(GRID.dims) < 0.3)
        voi = Voi("c", (0, 0, 0), 0.004)
        view = VIEWS[int(rng.integers(len(VIEWS)))]
        roi = project_voi_roi(view, voi)
        a0 = absorption_metric(simulate_projection(Phantom(GRID, mu), view), roi)
        a1 = absorption_metric(simulate_projection(Phantom(GRID, bumped), view), roi)
        assert a1 >= a0 - 1e-15
        assert 0.0 <= a0 <= 1.0
