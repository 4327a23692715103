import numpy as np
import pytest

from panocube.blending import BlendConfig, cross_face_blend
from panocube.geometry import Cubemap, FaceId, cubemap_from_sphere_function
from panocube.seams import (
    SeamParams,
    SeamReport,
    evaluate_seams,
    seam_sobel,
    seam_ssim,
    sobel_x,
    ssim_band,
)

from conftest import analytic_sphere_fn


def random_sphere_mixture(seed, channels=1):
    """Random low-order harmonic mixture, values within [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-1.0, 1.0, (channels, 8))

    def fn(d):
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        basis = np.stack(
            [x, y, z, x * y, y * z, z * x, x * x - y * y, 3 * z * z - 1], axis=-1
        )
        bound = np.array([1, 1, 1, 0.5, 0.5, 0.5, 1, 2.0])
        c = coef / (np.abs(coef) @ bound)[:, None] * 0.45
        vals = np.tensordot(basis, c, axes=([-1], [1])) + 0.5
        return vals[..., 0] if channels == 1 else vals

    return fn


class TestSsimBand:
    def test_identical_bands_are_one(self):
        rng = np.random.default_rng(1)
        band = rng.uniform(size=(64, 5, 3))
        assert ssim_band(band, band) == 1.0

    def test_equal_constants_are_one(self):
        a = np.full((32, 4, 1), 0.3)
        assert ssim_band(a, a.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_independent_noise_bands_near_zero(self):
        for seed in range(10):
            a = np.random.default_rng(10 + seed).uniform(size=(512, 5))
            b = np.random.default_rng(110 + seed).uniform(size=(512, 5))
            assert abs(ssim_band(a, b)) < 0.05

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ssim_band(np.zeros((8, 2)), np.zeros((8, 3)))

    def test_affine_rescale_with_scaled_constants_invariant(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(128, 5))
        b = a + rng.normal(0, 0.05, a.shape)
        base = ssim_band(a, b, SeamParams())
        scaled = ssim_band(2 * a, 2 * b, SeamParams(ssim_c1=4e-4, ssim_c2=36e-4))
        assert scaled == pytest.approx(base, abs=1e-12)


class TestSobelX:
    def test_constant_is_zero(self):
        assert np.all(sobel_x(np.full((6, 6), 0.4)) == 0.0)

    def test_horizontal_ramp_gives_eight(self):
        # Kernel weights against a unit-slope ramp in u sum to 8.
        g = np.tile(np.arange(5.0), (5, 1))
        out = sobel_x(g)
        np.testing.assert_allclose(out[1:-1, 1:-1], 8.0, atol=1e-12)

    def test_vertical_ramp_gives_zero(self):
        g = np.tile(np.arange(5.0)[:, None], (1, 5))
        out = sobel_x(g)
        np.testing.assert_allclose(out[1:-1, 1:-1], 0.0, atol=1e-12)

    def test_small_face_rejected(self):
        with pytest.raises(ValueError):
            sobel_x(np.zeros((2, 2)))


class TestSeamMetrics:
    def test_constant_cubemap(self):
        cube = Cubemap(np.full((6, 64, 64, 3), 0.5))
        report = evaluate_seams(cube)
        assert report.seam_ssim == pytest.approx(1.0, abs=1e-12)
        assert report.seam_sobel == 0.0

    def test_noise_cubemap_scores(self):
        rng = np.random.default_rng(0)
        cube = Cubemap(rng.uniform(size=(6, 512, 512, 3)))
        report = evaluate_seams(cube)
        assert report.seam_ssim < 0.05
        assert report.seam_sobel > 100.0

    def test_smooth_cubemap_scores(self):
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 512, 1)
        report = evaluate_seams(cube)
        assert report.seam_ssim > 0.8
        assert report.seam_sobel < 15.0

    def test_report_mean_is_edge_mean(self):
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 64, 1)
        report = evaluate_seams(cube)
        assert report.seam_ssim == pytest.approx(np.mean(report.per_edge_ssim))
        assert report.seam_sobel == pytest.approx(np.mean(report.per_edge_sobel))
        assert np.all(report.per_edge_sobel >= 0.0)
        assert np.all(np.abs(report.per_edge_ssim) <= 1.0 + 1e-9)

    def test_rotation_invariance(self):
        # A 90-degree yaw maps the face lattice onto itself, so the edge set
        # is permuted and both means must be unchanged.
        rot = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
        fn = random_sphere_mixture(5)
        cube = cubemap_from_sphere_function(fn, 64, 1)
        cube_rot = cubemap_from_sphere_function(lambda d: fn(d @ rot.T), 64, 1)
        a = evaluate_seams(cube)
        b = evaluate_seams(cube_rot)
        assert abs(a.seam_ssim - b.seam_ssim) < 1e-9
        assert abs(a.seam_sobel - b.seam_sobel) < 1e-9

    def test_offset_response_monotone(self):
        base = Cubemap(np.full((6, 64, 64, 1), 0.5))
        prev = -1.0
        for delta in (0.0, 0.02, 0.05, 0.1, 0.2):
            cube = base.copy()
            cube.faces[int(FaceId.FRONT)] += delta
            val = seam_sobel(cube).seam_sobel
            assert val > prev or (delta == 0.0 and val == 0.0)
            prev = val

    def test_value_scale_contract(self):
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 64, 1)
        unit = seam_sobel(cube, SeamParams(value_scale="unit"))
        byte = seam_sobel(cube, SeamParams(value_scale="byte"))
        np.testing.assert_array_equal(byte.per_edge_sobel, 255.0 * unit.per_edge_sobel)

    def test_band_width_guard(self):
        # Odd size: round(0.5 * 7) = 4 exceeds 7 // 2.
        cube = Cubemap(np.zeros((6, 7, 7, 1)))
        with pytest.raises(ValueError):
            seam_ssim(cube, SeamParams(band_frac=0.5))
        # face too small for the sobel stencil bands
        tiny = Cubemap(np.zeros((6, 3, 3, 1)))
        with pytest.raises(ValueError):
            seam_sobel(tiny)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SeamParams(band_frac=0.0)
        with pytest.raises(ValueError):
            SeamParams(value_scale="half")
        with pytest.raises(ValueError):
            SeamParams(ssim_c1=0.0)

    def test_report_shape_validation(self):
        with pytest.raises(ValueError):
            SeamReport(params=SeamParams(), per_edge_ssim=np.zeros(11))
        with pytest.raises(ValueError):
            SeamReport(params=SeamParams(), per_edge_sobel=-np.ones(12))


class TestOrderingReproduction:
    def test_noise_blended_ground_truth_ordering(self):
        # Noise scores far from ground truth on both metrics; a perturbed then
        # blended cubemap lands at the ground-truth end on every seed. The
        # blended Sobel may undershoot ground truth slightly (the harmonic
        # interiors are smoother than the projected signal), hence the 0.5
        # byte-scale allowance on that side.
        params = SeamParams()
        size = 256
        for seed in range(10):
            gt = cubemap_from_sphere_function(random_sphere_mixture(seed), size, 1)
            pert = gt.copy()
            for f in (FaceId.FRONT, FaceId.UP, FaceId.LEFT):
                pert.faces[int(f)] += 0.04
            blended = cross_face_blend(pert, BlendConfig(iterations=200))
            noise = Cubemap(np.random.default_rng(1000 + seed).uniform(size=(6, size, size, 1)))
            r_noise = evaluate_seams(noise, params)
            r_blend = evaluate_seams(blended, params)
            r_gt = evaluate_seams(gt, params)
            assert r_noise.seam_ssim < r_blend.seam_ssim - 0.9
            assert r_blend.seam_ssim <= r_gt.seam_ssim
            assert r_noise.seam_sobel > r_blend.seam_sobel + 100.0
            assert r_blend.seam_sobel >= r_gt.seam_sobel - 0.5
