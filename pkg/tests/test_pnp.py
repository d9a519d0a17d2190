"""Minimal solver, RANSAC, weighted sampling, and refinement tests.

P3P correctness is established through forward synthesis (project a known
pose, solve, require the pose among the solutions) plus solver
self-consistency (all solutions must reproject the minimal set).  The
refinement Jacobian is validated against central finite differences.
"""

import math

import numpy as np
import pytest

from semloc.geometry import RigidPose, project, rotation_error_deg
from semloc.matching import Correspondence2D3D, set_weights
from semloc.pnp import (
    PnPSolution,
    RansacConfig,
    _draw_minimal_sample,
    _exp_so3,
    _pose_jacobian,
    _reprojection_residuals,
    estimate_temporary_pose,
    refine_pose,
    solve_p3p,
    solve_pnp_dlt,
    weighted_ransac_pnp,
)

from conftest import default_intrinsics, random_pose, synthetic_correspondences


def _pose_matches(sol, pose, tol_m=1e-6, tol_deg=1e-6):
    return (
        np.linalg.norm(sol.center - pose.center) < tol_m
        and rotation_error_deg(sol.rotation, pose.rotation) < tol_deg
    )


class TestSolveP3P:
    def test_recovers_forward_synthesized_pose(self):
        rng = np.random.default_rng(1)
        K = default_intrinsics()
        for _ in range(100):
            pose = random_pose(rng)
            corrs = synthetic_correspondences(rng, K, pose, 3)
            sols = solve_p3p(corrs, K)
            assert any(_pose_matches(s, pose) for s in sols)

    def test_collinear_points_rejected(self):
        K = default_intrinsics()
        corrs = [
            Correspondence2D3D(np.array([100.0, 100.0]), np.array([0.0, 0.0, 5.0]), "a", "f"),
            Correspondence2D3D(np.array([200.0, 100.0]), np.array([1.0, 0.0, 5.0]), "a", "f"),
            Correspondence2D3D(np.array([300.0, 100.0]), np.array([2.0, 0.0, 5.0]), "a", "f"),
        ]
        with pytest.raises(ValueError, match="collinear"):
            solve_p3p(corrs, K)

    def test_equilateral_head_on(self):
        # symmetric configuration straight ahead: verified purely by
        # reprojection residuals
        K = default_intrinsics()
        r = 1.0
        pts = np.array([
            [r * math.cos(a), r * math.sin(a), 6.0]
            for a in (0.0, 2 * math.pi / 3, 4 * math.pi / 3)
        ])
        pose = RigidPose.identity()
        pix = np.stack([project(p, pose, K) for p in pts])
        sols = solve_p3p(pts, K, pixels=pix)
        assert sols
        for s in sols:
            for p, z in zip(pts, pix):
                back = project(p, s, K)
                assert back is not None
                assert np.linalg.norm(back - z) < 1e-9

    def test_self_consistency_random(self):
        rng = np.random.default_rng(2)
        K = default_intrinsics()
        for _ in range(300):
            pose = random_pose(rng)
            corrs = synthetic_correspondences(rng, K, pose, 3)
            pts = np.stack([c.world_point for c in corrs])
            pix = np.stack([c.query_pixel for c in corrs])
            for s in solve_p3p(pts, K, pixels=pix):
                for p, z in zip(pts, pix):
                    back = project(p, s, K)
                    assert back is not None
                    assert np.linalg.norm(back - z) < 1e-6

    def test_wrong_arity(self):
        K = default_intrinsics()
        rng = np.random.default_rng(3)
        corrs = synthetic_correspondences(rng, K, random_pose(rng), 4)
        with pytest.raises(ValueError, match="exactly 3"):
            solve_p3p(corrs, K)


class TestDLT:
    def test_recovers_pose_from_exact_data(self):
        rng = np.random.default_rng(4)
        K = default_intrinsics()
        for _ in range(30):
            pose = random_pose(rng)
            corrs = synthetic_correspondences(rng, K, pose, 12)
            sol = solve_pnp_dlt(corrs, K)
            assert sol is not None
            assert np.linalg.norm(sol.center - pose.center) < 1e-6
            assert rotation_error_deg(sol.rotation, pose.rotation) < 1e-5

    def test_too_few_points(self):
        rng = np.random.default_rng(5)
        K = default_intrinsics()
        corrs = synthetic_correspondences(rng, K, random_pose(rng), 5)
        assert solve_pnp_dlt(corrs, K) is None


class TestTemporaryPose:
    def test_exact_correspondences(self):
        rng = np.random.default_rng(6)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 20)
        sol = estimate_temporary_pose(corrs, K, RansacConfig(min_inliers=6, seed=0))
        assert sol is not None
        assert np.linalg.norm(sol.pose.center - pose.center) < 1e-6
        assert sol.num_inliers == 20

    def test_below_minimum_returns_none(self):
        rng = np.random.default_rng(7)
        K = default_intrinsics()
        corrs = synthetic_correspondences(rng, K, random_pose(rng), 3)
        assert estimate_temporary_pose(corrs, K, RansacConfig(seed=0)) is None

    def test_no_consensus_returns_none(self):
        rng = np.random.default_rng(8)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 30, outlier_frac=1.0)
        cfg = RansacConfig(min_inliers=6, seed=0, max_iterations=300, inlier_threshold_px=2.0)
        assert estimate_temporary_pose(corrs, K, cfg) is None

    def test_half_outliers_monte_carlo(self):
        # 50% gross outliers, 500 iterations: recovery within 0.01 m in at
        # least 99 of 100 seeded trials
        rng = np.random.default_rng(9)
        K = default_intrinsics()
        ok = 0
        for t in range(100):
            pose = random_pose(rng)
            corrs = synthetic_correspondences(rng, K, pose, 40, outlier_frac=0.5)
            cfg = RansacConfig(min_inliers=6, seed=1000 + t, max_iterations=500)
            sol = estimate_temporary_pose(corrs, K, cfg)
            if sol is not None and np.linalg.norm(sol.pose.center - pose.center) < 0.01:
                ok += 1
        assert ok >= 99

    def test_determinism(self):
        rng = np.random.default_rng(10)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 30, outlier_frac=0.3, pixel_noise=0.5)
        cfg = RansacConfig(min_inliers=6, seed=77)
        a = estimate_temporary_pose(corrs, K, cfg)
        b = estimate_temporary_pose(corrs, K, cfg)
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.center, b.pose.center)
        assert np.array_equal(a.inlier_indices, b.inlier_indices)

    def test_solution_satisfies_inlier_contract(self):
        rng = np.random.default_rng(11)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 50, outlier_frac=0.4, pixel_noise=1.0)
        cfg = RansacConfig(min_inliers=6, seed=5)
        sol = estimate_temporary_pose(corrs, K, cfg)
        assert sol is not None
        assert sol.num_inliers >= cfg.min_inliers
        errs = []
        for i in sol.inlier_indices:
            pix = project(corrs[i].world_point, sol.pose, K)
            errs.append(np.linalg.norm(pix - corrs[i].query_pixel))
        assert max(errs) < cfg.inlier_threshold_px
        assert np.mean(errs) == pytest.approx(sol.mean_reprojection_error_px, rel=1e-9)


class TestWeightedRansac:
    def test_uniform_weights_bitwise_equal_to_plain(self):
        # shared sampling code path: equal weights reproduce the unweighted
        # loop draw for draw under the same seed
        rng = np.random.default_rng(12)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 30, outlier_frac=0.3)
        uniform = set_weights(corrs, np.full(30, 1 / 30))
        cfg = RansacConfig(min_inliers=6, seed=41)
        a = estimate_temporary_pose(corrs, K, cfg)
        b = weighted_ransac_pnp(uniform, K, cfg)
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert np.array_equal(a.pose.center, b.pose.center)
        assert np.array_equal(a.inlier_indices, b.inlier_indices)

    def test_requires_normalized_weights(self):
        rng = np.random.default_rng(13)
        K = default_intrinsics()
        corrs = synthetic_correspondences(rng, K, random_pose(rng), 10)
        with pytest.raises(ValueError, match="sum to 1"):
            weighted_ransac_pnp(corrs, K, RansacConfig(seed=0))

    def test_too_few_correspondences_raises(self):
        rng = np.random.default_rng(14)
        K = default_intrinsics()
        corrs = set_weights(synthetic_correspondences(rng, K, random_pose(rng), 3), np.full(3, 1 / 3))
        with pytest.raises(ValueError, match="at least 4"):
            weighted_ransac_pnp(corrs, K, RansacConfig(seed=0))

    def test_dominant_weight_appears_in_most_samples(self):
        # one item holding weight 0.99 must show up in >= 95% of samples
        rng = np.random.default_rng(15)
        n = 40
        weights = np.full(n, 0.01 / (n - 1))
        weights[17] = 0.99
        hits = 0
        draws = 10_000
        for _ in range(draws):
            picks = _draw_minimal_sample(rng, weights)
            hits += 17 in picks
        assert hits / draws >= 0.95

    def test_first_draw_marginals_match_weights(self):
        # the first draw of each minimal sample is exactly multinomial
        rng = np.random.default_rng(16)
        w = np.array([0.5, 0.25, 0.15, 0.06, 0.04])
        counts = np.zeros(5)
        draws = 20_000
        for _ in range(draws):
            counts[_draw_minimal_sample(rng, w)[0]] += 1
        freq = counts / draws
        sigma = np.sqrt(w * (1 - w) / draws)
        assert np.all(np.abs(freq - w) <= 3.5 * sigma)

    def test_samples_are_distinct(self):
        rng = np.random.default_rng(17)
        w = np.array([0.97, 0.01, 0.01, 0.01])
        for _ in range(500):
            picks = _draw_minimal_sample(rng, w)
            assert len(set(picks.tolist())) == 3

    def test_zero_weights_never_sampled(self):
        rng = np.random.default_rng(18)
        w = np.array([0.5, 0.0, 0.3, 0.0, 0.2, 0.0, 0.0])
        for _ in range(2000):
            picks = set(_draw_minimal_sample(rng, w).tolist())
            assert picks <= {0, 2, 4}


class TestRefinePose:
    def test_zero_residual_fixed_point(self):
        rng = np.random.default_rng(19)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 40)
        sol = estimate_temporary_pose(corrs, K, RansacConfig(min_inliers=6, seed=0))
        refined = refine_pose(sol, corrs, K)
        res, _ = _reprojection_residuals(refined.rotation, refined.center,
                                         np.stack([c.world_point for c in corrs]),
                                         np.stack([c.query_pixel for c in corrs]), K)
        rms = math.sqrt(float(res @ res) / len(res))
        assert rms <= 1e-10

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(20)
        K = default_intrinsics()
        pose = random_pose(rng)
        corrs = synthetic_correspondences(rng, K, pose, 15, pixel_noise=1.0)
        points = np.stack([c.world_point for c in corrs])
        pixels = np.stack([c.query_pixel for c in corrs])
        R0, C0 = np.array(pose.rotation), np.array(pose.center)

        def residual(delta):
            R = _exp_so3(delta[:3]) @ R0
            C = C0 + delta[3:]
            r, _ = _reprojection_residuals(R, C, points, pixels, K)
            return r

        _, cam = _reprojection_residuals(R0, C0, points, pixels, K)
        J = _pose_jacobian(R0, C0, points, cam, K)
        h = 1e-6
        worst = 0.0
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            fd = (residual(e) - residual(-e)) / (2 * h)
            num = np.abs(J[:, k] - fd)
            den = np.maximum(np.abs(J[:, k]), 1.0)
            worst = max(worst, float(np.max(num / den)))
        assert worst < 1e-5

    def test_improves_noisy_pose_most_of_the_time(self):
        rng = np.random.default_rng(21)
        K = default_intrinsics()
        improved = 0
        trials = 60
        for t in range(trials):
            pose = random_pose(rng)
            corrs = synthetic_correspondences(rng, K, pose, 100, pixel_noise=1.0)
            sol = estimate_temporary_pose(corrs, K, RansacConfig(min_inliers=6, seed=t))
            refined = refine_pose(sol, corrs, K)
            before = np.linalg.norm(sol.pose.center - pose.center)
            after = np.linalg.norm(refined.center - pose.center)
            improved += after < before
        assert improved >= 0.9 * trials

    def test_cost_never_increases(self):
        rng = np.random.default_rng(22)
        K = default_intrinsics()
        for t in range(20):
            pose = random_pose(rng)
            corrs = synthetic_correspondences(rng, K, pose, 50, pixel_noise=2.0)
            sol = estimate_temporary_pose(corrs, K, RansacConfig(min_inliers=6, seed=t))
            pts = np.stack([corrs[i].world_point for i in sol.inlier_indices])
            pix = np.stack([corrs[i].query_pixel for i in sol.inlier_indices])
            r0, _ = _reprojection_residuals(sol.pose.rotation, sol.pose.center, pts, pix, K)
            refined = refine_pose(sol, corrs, K)
            r1, _ = _reprojection_residuals(refined.rotation, refined.center, pts, pix, K)
            assert float(r1 @ r1) <= float(r0 @ r0) + 1e-12


class TestContaminationMini:
    def test_weighted_beats_uniform_with_scored_outlier_image(self):
        # one wrong retrieved image contributes 60% of the matches with a
        # coherent (but misplaced) consensus; its near-zero score steers the
        # weighted sampler away from it
        rng = np.random.default_rng(23)
        K = default_intrinsics()
        w_ok = 0
        u_ok = 0
        trials = 30
        for t in range(trials):
            pose = random_pose(rng)
            good = synthetic_correspondences(rng, K, pose, 32, source_id="good")
            shift = np.array([20.0, 0.0, 0.0])
            wrong = [
                Correspondence2D3D(c.query_pixel, c.world_point + shift, "wrong", c.family, 1.0)
                for c in synthetic_correspondences(rng, K, pose, 48, source_id="wrong")
            ]
            corrs = good + wrong
            # weights as normalize_weights would produce: wrong image scored 0
            weights = np.array([1.0 / 32 if c.source_image_id == "good" else 0.0 for c in corrs])
            weighted = set_weights(corrs, weights)
            uniform = set_weights(corrs, np.full(len(corrs), 1.0 / len(corrs)))
            cfg = RansacConfig(min_inliers=12, seed=900 + t, max_iterations=200,
                               adaptive_stopping=False, inlier_threshold_px=2.0)
            sw = weighted_ransac_pnp(weighted, K, cfg)
            su = weighted_ransac_pnp(uniform, K, cfg)
            w_ok += sw is not None and np.linalg.norm(sw.pose.center - pose.center) < 0.05
            u_ok += su is not None and np.linalg.norm(su.pose.center - pose.center) < 0.05
        assert w_ok > u_ok
        assert w_ok >= 0.9 * trials


class TestRansacConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            RansacConfig(inlier_threshold_px=0.0)
        with pytest.raises(ValueError):
            RansacConfig(confidence=1.0)
        with pytest.raises(ValueError):
            RansacConfig(max_iterations=0)
