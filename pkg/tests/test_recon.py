import math

import numpy as np
import pytest

from ctcover.errors import InvalidArgument
from ctcover.geometry import DetectorSpec, tilted_circle_candidates
from ctcover.phantom import Grid, ProjectionImage, build_phantom, simulate_projection
from ctcover.recon import RoiMask, Volume, cnr, psnr, read_volume, sart_reconstruct, ssim, write_volume

from conftest import box

G8 = Grid.centered((8, 8, 8), 0.001)
G16 = Grid.centered((16, 16, 16), 0.001)


def vol(values, grid=G8):
    return Volume(grid, np.asarray(values, dtype=float))


def full_mask(grid=G8):
    return RoiMask(grid, np.ones(grid.dims, dtype=bool))


class TestSart:
    det = DetectorSpec(0.06, 0.06, 24, 24)

    def test_empty_object(self):
        views = tilted_circle_candidates(1, [0, 0], 6, 360, 0.2, 0.1, self.det)
        projs = [ProjectionImage(v.id, np.ones((24, 24))) for v in views]
        out = sart_reconstruct(projs, views, G8, n_iters=3)
        assert np.all(out.values == 0.0)

    def test_cube_residual_decreases(self):
        phantom = build_phantom(G16.dims, 0.001, G16.origin_m, [box((0, 0, 0), (0.004,) * 3, 20.0)])
        views = tilted_circle_candidates(3, [-40, 40], 12, 360, 0.2, 0.1, self.det)
        projs = [simulate_projection(phantom, v) for v in views]
        history = []
        out = sart_reconstruct(projs, views, G16, n_iters=20, relaxation=0.5, history=history)
        totals = [h["total"] for h in history]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(totals, totals[1:]))
        assert totals[-1] < 0.2 * totals[0]
        assert np.all(out.values >= 0)
        roi = RoiMask.sphere(G16, (0, 0, 0), 0.007)
        assert psnr(Volume(G16, phantom.mu), out, roi) > psnr(Volume(G16, phantom.mu), Volume(G16, 0 * out.values), roi)

    def test_mismatched_ids(self):
        views = tilted_circle_candidates(1, [0, 0], 3, 360, 0.2, 0.1, self.det)
        projs = [ProjectionImage(v.id + 1, np.ones((24, 24))) for v in views]
        with pytest.raises(InvalidArgument):
            sart_reconstruct(projs, views, G8)

    @pytest.mark.parametrize("kw", [dict(n_iters=0), dict(relaxation=0.0), dict(relaxation=1.5)])
    def test_invalid_params(self, kw):
        views = tilted_circle_candidates(1, [0, 0], 2, 360, 0.2, 0.1, self.det)
        projs = [ProjectionImage(v.id, np.ones((24, 24))) for v in views]
        with pytest.raises(InvalidArgument):
            sart_reconstruct(projs, views, G8, **kw)


def test_shapes_phantom_quality(sart_case):
    c = sart_case
    got = psnr(c["reference"], c["recon"], c["roi"])
    floor = psnr(c["reference"], c["zero"], c["roi"])
    assert got >= floor + 20.0
    assert ssim(c["reference"], c["recon"], c["roi"]) > 0.95
    per_view = np.array([h["per_view"] for h in c["history"]])
    assert np.all(np.diff(per_view, axis=0) <= 1e-9 * (1 + per_view[:-1]))


class TestPsnr:
    def test_identical(self):
        a = vol(np.random.default_rng(0).random(G8.dims) + 0.1)
        assert psnr(a, a, full_mask()) == math.inf

    def test_known_value(self):
        # peak 1, every voxel off by 0.1 -> MSE 0.01 -> 20 dB
        ref = np.zeros(G8.dims)
        ref[0, 0, 0] = 1.0
        assert psnr(vol(ref), vol(ref + 0.1), full_mask()) == pytest.approx(20.0, abs=1e-9)

    def test_scale_invariant(self):
        rng = np.random.default_rng(1)
        a, b = rng.random(G8.dims), rng.random(G8.dims)
        assert psnr(vol(3 * a), vol(3 * b), full_mask()) == pytest.approx(psnr(vol(a), vol(b), full_mask()))

    def test_roi_only(self):
        a = np.ones(G8.dims)
        b = a.copy()
        b[0] = 5.0
        roi = RoiMask.sphere(G8, (0, 0, 0), 0.002)
        assert psnr(vol(a), vol(b), roi) == math.inf

    def test_grid_mismatch(self):
        with pytest.raises(InvalidArgument):
            psnr(vol(np.ones(G8.dims)), Volume(G16, np.ones(G16.dims)), full_mask())


class TestSsim:
    def test_identical(self):
        a = vol(np.random.default_rng(2).random(G8.dims))
        assert ssim(a, a, full_mask()) == pytest.approx(1.0, abs=1e-12)

    def test_noise_lowers(self):
        rng = np.random.default_rng(3)
        g = Grid.centered((12, 12, 12), 0.001)
        a = rng.random(g.dims)
        s = ssim(Volume(g, a), Volume(g, a + rng.normal(0, 0.3, g.dims)), full_mask(g))
        assert 0 < s < 0.9

    def test_flat_reference(self):
        # one window, zero variances, L falls back to max|ref| = 1
        c1 = 1e-4
        expected = (2 * 1 * 2 + c1) / (1 + 4 + c1)
        assert ssim(vol(np.ones(G8.dims)), vol(2 * np.ones(G8.dims)), full_mask()) == pytest.approx(expected)

    def test_window_too_large(self):
        with pytest.raises(InvalidArgument):
            ssim(vol(np.ones(G8.dims)), vol(np.ones(G8.dims)), RoiMask.sphere(G8, (0, 0, 0), 0.001))


class TestCnr:
    def test_hand_example(self):
        v = np.zeros(G8.dims)
        roi = np.zeros(G8.dims, dtype=bool)
        bg = np.zeros(G8.dims, dtype=bool)
        roi[0, 0, :2] = True
        v[0, 0, :2] = 2.0
        bg[1, 0, :4] = True
        v[1, 0, :2] = 1.0
        assert cnr(vol(v), RoiMask(G8, roi), RoiMask(G8, bg)) == pytest.approx(3.0)

    def test_constant_background(self):
        v = np.zeros(G8.dims)
        v[0] = 1.0
        roi = np.zeros(G8.dims, dtype=bool)
        roi[0] = True
        with pytest.warns(RuntimeWarning):
            assert cnr(vol(v), RoiMask(G8, roi), RoiMask(G8, ~roi)) == math.inf

    def test_overlap_rejected(self):
        m = RoiMask(G8, np.ones(G8.dims, dtype=bool))
        with pytest.raises(InvalidArgument):
            cnr(vol(np.ones(G8.dims)), m, m)


def test_shell_disjoint_from_sphere():
    inner = RoiMask.sphere(G16, (0, 0, 0), 0.003)
    shell = RoiMask.shell(G16, (0, 0, 0), 0.003, 0.005)
    assert inner.count > 0 and shell.count > 0 and not np.any(inner.mask & shell.mask)


def test_volume_roundtrip(tmp_path):
    a = vol(np.random.default_rng(4).random(G8.dims))
    write_volume(tmp_path / "v.raw", a)
    b = read_volume(tmp_path / "v.raw")
    assert b.grid == a.grid
    np.testing.assert_allclose(b.values, a.values, rtol=1e-7)
    with pytest.raises(InvalidArgument):
        Volume(G8, np.full(G8.dims, np.nan))
