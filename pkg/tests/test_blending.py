import numpy as np
import pytest

from panocube.blending import (
    BlendConfig,
    PoissonProblem,
    cross_face_blend,
    dense_poisson_oracle,
    dirichlet_boundary,
    gauss_seidel_solve,
    interior_residual,
    laplacian5,
)
from panocube.geometry import Cubemap, FaceId, cubemap_from_sphere_function, edge_table, extract_edge_band

from conftest import analytic_sphere_fn


def make_consistent_cubemap(size=24, channels=1):
    """Smooth cubemap whose outer rings coincide with their Dirichlet frames
    (a blend fixed point). Repeatedly overwriting each ring with its frame is
    an averaging contraction: sides settle after one pass and the three-face
    corner pixels converge geometrically to consensus."""
    cube = cubemap_from_sphere_function(analytic_sphere_fn, size, channels)
    for _ in range(60):
        frames = [dirichlet_boundary(cube, f) for f in FaceId]
        for face in FaceId:
            f = cube.faces[int(face)]
            frame = frames[int(face)]
            for sl in (np.s_[0, :], np.s_[-1, :], np.s_[:, 0], np.s_[:, -1]):
                f[sl] = frame[sl]
    return cube


class TestLaplacian:
    def test_constant_is_zero(self):
        assert np.all(laplacian5(np.full((8, 8), 0.7)) == 0.0)

    def test_linear_ramp_is_harmonic(self):
        u = np.tile(np.arange(8.0), (8, 1))
        assert np.abs(laplacian5(u)).max() < 1e-12

    def test_quadratic_ramp(self):
        # g = u^2: (u+1)^2 + (u-1)^2 + 2u^2 - 4u^2 = 2 at every interior pixel.
        u = np.tile(np.arange(9.0), (9, 1))
        lap = laplacian5(u**2)
        np.testing.assert_allclose(lap[1:-1, 1:-1], 2.0, atol=1e-12)
        assert np.all(lap[0, :] == 0.0)

    def test_small_face_rejected(self):
        with pytest.raises(ValueError):
            laplacian5(np.zeros((2, 2)))


class TestDirichletBoundary:
    def test_constant_cubemap_frame(self):
        cube = Cubemap(np.full((6, 12, 12, 3), 0.42))
        for face in FaceId:
            frame = dirichlet_boundary(cube, face)
            ring = np.concatenate([frame[0], frame[-1], frame[:, 0], frame[:, -1]])
            assert np.all(ring == 0.42)

    def test_zero_face_among_ones(self):
        faces = np.ones((6, 10, 10, 1))
        faces[int(FaceId.FRONT)] = 0.0
        cube = Cubemap(faces)
        frame = dirichlet_boundary(cube, FaceId.FRONT)
        ring = np.concatenate([frame[0], frame[-1], frame[:, 0], frame[:, -1]])
        assert np.allclose(ring, 0.5)

    def test_smooth_frame_close_to_own_border(self):
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 128, 1)
        for face in FaceId:
            frame = dirichlet_boundary(cube, face)
            own = cube.face(face)
            for sl in (np.s_[0, :], np.s_[-1, :], np.s_[:, 0], np.s_[:, -1]):
                assert np.abs(frame[sl] - own[sl]).max() < 0.02


class TestGaussSeidel:
    def test_fixed_point(self):
        rng = np.random.default_rng(0)
        g = rng.uniform(size=(16, 16))
        problem = PoissonProblem(laplacian5(g), g)
        f = gauss_seidel_solve(problem, g, BlendConfig(iterations=123))
        assert np.abs(f - g).max() < 1e-12

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            g = rng.uniform(size=(8, 8))
            problem = PoissonProblem(rng.normal(0.0, 0.1, (8, 8)), rng.uniform(size=(8, 8)))
            gs = gauss_seidel_solve(problem, g, BlendConfig(iterations=2000))
            exact = dense_poisson_oracle(problem)
            assert np.abs(gs - exact).max() < 1e-4

    def test_linear_ramp_boundary(self):
        # Zero divergence with ramp boundary: the harmonic solution is the
        # ramp itself (confirmed against the dense oracle).
        s = 12
        ramp = np.tile(np.arange(s) / (s - 1.0), (s, 1))
        problem = PoissonProblem(np.zeros((s, s)), ramp)
        f = gauss_seidel_solve(problem, np.full((s, s), 0.5), BlendConfig(iterations=2000))
        assert np.abs(f - ramp).max() < 1e-4
        assert np.abs(dense_poisson_oracle(problem) - ramp).max() < 1e-10

    def test_maximum_principle(self):
        rng = np.random.default_rng(5)
        problem = PoissonProblem(np.zeros((16, 16)), rng.uniform(size=(16, 16)))
        f = gauss_seidel_solve(problem, np.zeros((16, 16)), BlendConfig(iterations=3000))
        ring = np.concatenate(
            [problem.boundary[0], problem.boundary[-1], problem.boundary[:, 0], problem.boundary[:, -1]]
        )
        assert f[1:-1, 1:-1].min() >= ring.min() - 1e-6
        assert f[1:-1, 1:-1].max() <= ring.max() + 1e-6

    def test_residual_monotone_over_sweeps(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            g = rng.uniform(size=(16, 16))
            problem = PoissonProblem(rng.normal(0.0, 0.2, (16, 16)), rng.uniform(size=(16, 16)))
            prev = None
            f = g
            for _ in range(30):
                f = gauss_seidel_solve(problem, f, BlendConfig(iterations=1))
                res = interior_residual(f, problem.divergence)
                if prev is not None:
                    assert res <= prev + 1e-12
                prev = res

    def test_early_stop_reaches_threshold(self):
        rng = np.random.default_rng(9)
        problem = PoissonProblem(np.zeros((12, 12)), rng.uniform(size=(12, 12)))
        cfg = BlendConfig(iterations=100000, convergence_check=1e-8)
        f = gauss_seidel_solve(problem, np.zeros((12, 12)), cfg)
        assert interior_residual(f, problem.divergence) <= 1e-8

    def test_oracle_rejects_large_face(self):
        with pytest.raises(ValueError):
            dense_poisson_oracle(PoissonProblem(np.zeros((40, 40)), np.zeros((40, 40))))


class TestCrossFaceBlend:
    def test_default_iterations_is_200(self):
        assert BlendConfig().iterations == 200

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BlendConfig(iterations=0)
        with pytest.raises(ValueError):
            BlendConfig(convergence_check=-1.0)

    def test_constant_cubemap_is_identity(self):
        cube = Cubemap(np.full((6, 16, 16, 3), 0.31))
        out = cross_face_blend(cube, BlendConfig(iterations=40))
        assert np.abs(out.faces - cube.faces).max() < 1e-12

    def test_consistent_cubemap_is_identity(self):
        cube = make_consistent_cubemap(24)
        out = cross_face_blend(cube, BlendConfig(iterations=300))
        assert np.abs(out.faces - cube.faces).max() < 1e-9

    def test_boundary_satisfaction(self):
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 32, 1)
        out = cross_face_blend(cube, BlendConfig(iterations=10))
        for face in FaceId:
            frame = dirichlet_boundary(cube, face)
            got = out.face(face)
            for sl in (np.s_[0, :], np.s_[-1, :], np.s_[:, 0], np.s_[:, -1]):
                np.testing.assert_array_equal(got[sl], frame[sl])

    def test_result_reproducible(self):
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 32, 3)
        a = cross_face_blend(cube, BlendConfig(iterations=25))
        b = cross_face_blend(cube, BlendConfig(iterations=25))
        np.testing.assert_array_equal(a.faces, b.faces)

    def test_faces_solved_independently(self):
        # Boundaries read only original data: a solved face must equal the
        # face solved alone from the same frame.
        cube = cubemap_from_sphere_function(analytic_sphere_fn, 24, 1)
        cfg = BlendConfig(iterations=50)
        out = cross_face_blend(cube, cfg)
        face = FaceId.LEFT
        frame = dirichlet_boundary(cube, face)
        g = cube.face(face)[:, :, 0]
        problem = PoissonProblem(laplacian5(g), frame[:, :, 0])
        alone = gauss_seidel_solve(problem, g, cfg)
        np.testing.assert_array_equal(out.face(face)[:, :, 0], alone)
