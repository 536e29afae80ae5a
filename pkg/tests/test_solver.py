"""Direct solver: every stage against hand values and the forward oracle."""

import math

import numpy as np
import pytest

from conftest import DEFAULT_GROUND_XY, angle_between, make_oracle_scene

from posedist.core import CENTERED, EstimationFailure, PersonObservation, PixelPoint
from posedist.solver import (
    CalibrationResult,
    ScaledDepths,
    build_focal_system,
    build_vanishing_system,
    calibrate_batch,
    calibrate_from_arrays,
    _depths_from_arrays,
    pairwise_distances,
    plane_offset,
    reconstruct,
    recover_scale,
    solve_focal,
    solve_scaled_depths,
    solve_vanishing_direction,
)


def obs(top_uv, bot_uv):
    return PersonObservation(
        ankle_center=PixelPoint(bot_uv[0], bot_uv[1], CENTERED),
        shoulder_center=PixelPoint(top_uv[0], top_uv[1], CENTERED),
    )


class TestVanishingSystem:
    def test_hand_cross_products(self):
        a = build_vanishing_system([obs((0, -1), (0, 0)), obs((1, -1), (1, 0))])
        assert np.allclose(a[0], [-1.0, 0.0, 0.0])
        assert np.allclose(a[1], [-1.0, 0.0, 1.0])

    def test_swap_negates_row(self):
        fwd = build_vanishing_system([obs((3, -7), (2, 1)), obs((0, -1), (0, 0))])
        rev = build_vanishing_system([obs((2, 1), (3, -7)), obs((0, 0), (0, -1))])
        assert np.allclose(fwd, -rev)

    def test_requires_two_people(self):
        with pytest.raises(EstimationFailure, match="insufficient"):
            build_vanishing_system([obs((0, -1), (0, 0))])


class TestVanishingDirection:
    def test_vertical_segments_vanish_at_infinity(self):
        sol = solve_vanishing_direction(np.array([[-1.0, 0.0, 0.0], [-1.0, 0.0, 1.0]]))
        assert np.allclose(np.abs(sol.v_tilde), [0.0, 1.0, 0.0], atol=1e-12)
        assert sol.smallest_singular_value == pytest.approx(0.0, abs=1e-12)

    def test_concurrent_lines(self):
        observations = [obs((0.5, 1), (1, 0)), obs((-0.5, 1), (-1, 0))]
        sol = solve_vanishing_direction(build_vanishing_system(observations))
        expected = np.array([0.0, 2.0, 1.0]) / np.linalg.norm([0.0, 2.0, 1.0])
        assert angle_between(sol.v_tilde, expected) < 1e-12

    def test_oracle_scene_direction(self, oracle_scene):
        sol = solve_vanishing_direction(build_vanishing_system(oracle_scene.observations()))
        assert angle_between(sol.v_tilde, oracle_scene.v_true) < 1e-9

    def test_rank_deficiency_reported(self):
        a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 6.0, 9.0]])
        with pytest.raises(EstimationFailure, match="rank_deficient"):
            solve_vanishing_direction(a)

    def test_row_scaling_leaves_direction(self, oracle_scene):
        a = build_vanishing_system(oracle_scene.observations())
        scaled = a * np.array([3.0, 0.2, 7.0, 1.5, 11.0, 0.05])[:, None]
        v1 = solve_vanishing_direction(a).v_tilde
        v2 = solve_vanishing_direction(scaled).v_tilde
        assert angle_between(v1, v2) < 1e-9


class TestScaledDepths:
    def test_depth_ratios_match_truth(self, oracle_scene):
        sol = solve_vanishing_direction(build_vanishing_system(oracle_scene.observations()))
        depths = solve_scaled_depths(oracle_scene.observations(), sol.v_tilde, 1.7)
        true_b = oracle_scene.x_b[:, 2]
        ratios = depths.lambda_b / depths.lambda_b[0]
        assert np.allclose(ratios, true_b / true_b[0], rtol=1e-9)
        true_t = oracle_scene.x_t[:, 2]
        assert np.allclose(depths.lambda_t / depths.lambda_t[0], true_t / true_t[0], rtol=1e-9)

    def test_doubling_v_doubles_depths(self, oracle_scene):
        sol = solve_vanishing_direction(build_vanishing_system(oracle_scene.observations()))
        d1 = solve_scaled_depths(oracle_scene.observations(), sol.v_tilde, 1.7)
        d2 = solve_scaled_depths(oracle_scene.observations(), 2.0 * sol.v_tilde, 1.7)
        assert np.allclose(d2.lambda_b, 2.0 * d1.lambda_b, rtol=1e-12)
        assert np.allclose(d2.lambda_t, 2.0 * d1.lambda_t, rtol=1e-12)

    def test_coincident_endpoints_degenerate(self):
        top_h = np.array([[5.0, 5.0, 1.0]])
        bot_h = np.array([[5.0, 5.0, 1.0]])
        _, _, ok = _depths_from_arrays(top_h, bot_h, np.array([0.0, 1.0, 0.0]), 1.7)
        assert not ok


class TestFocalSystem:
    def test_pair_count(self, oracle_scene_small):
        sol = solve_vanishing_direction(build_vanishing_system(oracle_scene_small.observations()))
        depths = solve_scaled_depths(oracle_scene_small.observations(), sol.v_tilde, 1.7)
        b, y = build_focal_system(sol.v_tilde, oracle_scene_small.observations(), depths)
        assert b.shape == (3, 2) and y.shape == (3,)

    def test_vertical_vanishing_at_infinity_degenerates(self):
        observations = [obs((0, -10), (0, 0)), obs((50, -10), (50, 0)), obs((-40, -10), (-40, 0))]
        v = np.array([0.0, 1.0, 0.0])
        depths = solve_scaled_depths(observations, v, 1.7)
        b, y = build_focal_system(v, observations, depths)
        assert np.allclose(b[:, 0], 0.0)
        assert np.allclose(y, 0.0)
        with pytest.raises(EstimationFailure):
            solve_focal(b, y)

    def test_truth_satisfies_system(self, oracle_scene):
        s = oracle_scene
        v = s.v_true / np.linalg.norm(s.v_true)
        depths = ScaledDepths(lambda_t=s.x_t[:, 2], lambda_b=s.x_b[:, 2])
        b, y = build_focal_system(v, s.observations(), depths)
        resid = b @ np.array([1.0 / s.fx**2, 1.0 / s.fy**2]) - y
        assert np.max(np.abs(resid)) < 1e-9 * max(1.0, np.max(np.abs(y)))


class TestSolveFocal:
    def test_noise_free_recovery(self, oracle_scene):
        sol = solve_vanishing_direction(build_vanishing_system(oracle_scene.observations()))
        depths = solve_scaled_depths(oracle_scene.observations(), sol.v_tilde, 1.7)
        b, y = build_focal_system(sol.v_tilde, oracle_scene.observations(), depths)
        fx, fy = solve_focal(b, y)
        assert fx == pytest.approx(960.0, rel=1e-6)
        assert fy == pytest.approx(540.0, rel=1e-6)

    def test_positivity_violation_fails(self):
        b = np.array([[1.0, 0.0], [0.0, 1.0]])
        y = np.array([-1.0, 1.0])
        with pytest.raises(EstimationFailure, match="focal_nonpositive"):
            solve_focal(b, y)

    def test_fx_eq_fy_two_people(self):
        scene = make_oracle_scene(
            DEFAULT_GROUND_XY[:2], width=1080, height=1080, fov_deg=60.0
        )
        sol = solve_vanishing_direction(build_vanishing_system(scene.observations()))
        depths = solve_scaled_depths(scene.observations(), sol.v_tilde, 1.7)
        b, y = build_focal_system(sol.v_tilde, scene.observations(), depths)
        fx, fy = solve_focal(b, y, fx_eq_fy=True)
        assert fx == fy
        assert fx == pytest.approx(scene.fx, rel=1e-6)


class TestRecoverScale:
    def test_identity_camera(self):
        depths = ScaledDepths(lambda_t=np.array([2.0]), lambda_b=np.array([3.0]))
        mu = recover_scale(np.array([0.0, 0.0, 2.0]), np.eye(3), depths)
        assert mu == pytest.approx(2.0)

    def test_negative_depths_flip_sign(self):
        depths = ScaledDepths(lambda_t=np.array([-2.0]), lambda_b=np.array([-3.0]))
        mu = recover_scale(np.array([0.0, 0.0, 2.0]), np.eye(3), depths)
        assert mu == pytest.approx(-2.0)

    def test_mixed_signs_fail(self):
        depths = ScaledDepths(lambda_t=np.array([2.0]), lambda_b=np.array([-3.0]))
        with pytest.raises(EstimationFailure, match="cheirality"):
            recover_scale(np.array([0.0, 0.0, 2.0]), np.eye(3), depths)

    def test_oracle_normal_recovery(self, oracle_scene):
        s = oracle_scene
        sol = solve_vanishing_direction(build_vanishing_system(s.observations()))
        depths = solve_scaled_depths(s.observations(), sol.v_tilde, 1.7)
        b, y = build_focal_system(sol.v_tilde, s.observations(), depths)
        fx, fy = solve_focal(b, y)
        w = np.diag([1.0 / fx**2, 1.0 / fy**2, 1.0])
        mu = recover_scale(sol.v_tilde, w, depths)
        normal = np.array([sol.v_tilde[0] / fx, sol.v_tilde[1] / fy, sol.v_tilde[2]]) / mu
        normal /= np.linalg.norm(normal)
        assert angle_between(normal, s.normal) < 1e-9
        assert normal @ s.normal > 0  # cheirality fixes the physical sign


class TestReconstruct:
    def test_optical_axis(self):
        o = [obs((0, -1), (0, 0))]
        from posedist.core import CameraIntrinsics

        intr = CameraIntrinsics(fx=1.0, fy=1.0, cx=0, cy=0, width=2, height=2)
        depths = ScaledDepths(lambda_t=np.array([5.0]), lambda_b=np.array([5.0]))
        rec = reconstruct(intr, depths, o)
        assert np.allclose(rec.x_b[0], [0.0, 0.0, 5.0])

    def test_focal_division(self):
        o = [obs((2, 0), (0, -1))]
        from posedist.core import CameraIntrinsics

        intr = CameraIntrinsics(fx=2.0, fy=2.0, cx=0, cy=0, width=8, height=8)
        depths = ScaledDepths(lambda_t=np.array([1.0]), lambda_b=np.array([1.0]))
        rec = reconstruct(intr, depths, o)
        assert np.allclose(rec.x_t[0], [1.0, 0.0, 1.0])

    def test_non_positive_depth_rejected(self, oracle_scene_small):
        from posedist.core import CameraIntrinsics

        intr = CameraIntrinsics(fx=960, fy=540, cx=0, cy=0, width=1, height=1)
        depths = ScaledDepths(
            lambda_t=np.array([1.0, 1.0, -1.0]), lambda_b=np.ones(3)
        )
        with pytest.raises(ValueError):
            reconstruct(intr, depths, oracle_scene_small.observations())


class TestPlaneOffset:
    def test_identity_single_person(self):
        n = np.array([0.0, -0.8, -0.6])
        x_b = np.array([[0.0, 0.0, 5.0]])
        h = 1.7
        rec_x_t = x_b + h * n
        from posedist.core import Reconstruction

        rec = Reconstruction(
            lambda_b=np.array([5.0]), lambda_t=np.array([rec_x_t[0, 2]]), x_b=x_b, x_t=rec_x_t
        )
        assert plane_offset(n, rec, h) == pytest.approx(-(n @ x_b[0]), abs=1e-12)

    def test_plug_in(self):
        n = np.array([0.0, -1.0, 0.0])
        x_b = np.array([[0.0, 3.0, 5.0]])
        x_t = x_b + 1.7 * n
        from posedist.core import Reconstruction

        rec = Reconstruction(
            lambda_b=np.array([5.0]), lambda_t=np.array([5.0]), x_b=x_b, x_t=x_t
        )
        assert plane_offset(n, rec, 1.7) == pytest.approx(3.0)

    def test_empty_rejected(self):
        from posedist.core import Reconstruction

        rec = Reconstruction(
            lambda_b=np.zeros(0), lambda_t=np.zeros(0), x_b=np.zeros((0, 3)), x_t=np.zeros((0, 3))
        )
        with pytest.raises(ValueError):
            plane_offset(np.array([0.0, 0.0, 1.0]), rec, 1.7)


class TestCalibrateBatch:
    def test_noise_free_end_to_end(self, oracle_scene_small):
        s = oracle_scene_small
        result = calibrate_batch(s.observations(), 1.7)
        assert isinstance(result, CalibrationResult)
        assert result.intrinsics.fx == pytest.approx(s.fx, rel=1e-8)
        assert result.intrinsics.fy == pytest.approx(s.fy, rel=1e-8)
        assert angle_between(result.plane.normal, s.normal) < 1e-8
        assert result.plane.rho == pytest.approx(s.rho, rel=1e-8)
        assert np.allclose(result.reconstruction.x_b, s.x_b, rtol=1e-7, atol=1e-8)

    def test_insufficient_measurements(self, oracle_scene):
        two = oracle_scene.observations()[:2]
        with pytest.raises(EstimationFailure, match="insufficient"):
            calibrate_batch(two, 1.7, fx_eq_fy=False)

    def test_plane_and_height_consistency(self, oracle_scene):
        result = calibrate_batch(oracle_scene.observations(), 1.7)
        n, rho = result.plane.normal, result.plane.rho
        residuals = np.abs(result.reconstruction.x_b @ n + rho)
        assert residuals.max() < 1e-9
        seg = np.linalg.norm(result.reconstruction.x_t - result.reconstruction.x_b, axis=1)
        assert np.abs(seg - 1.7).max() < 1e-9

    def test_image_invariance_under_plane_translation(self):
        a = make_oracle_scene(DEFAULT_GROUND_XY)
        b = make_oracle_scene(DEFAULT_GROUND_XY + np.array([0.8, 1.5]))
        ra = calibrate_batch(a.observations(), 1.7)
        rb = calibrate_batch(b.observations(), 1.7)
        assert ra.intrinsics.fx == pytest.approx(rb.intrinsics.fx, rel=1e-7)
        assert ra.intrinsics.fy == pytest.approx(rb.intrinsics.fy, rel=1e-7)

    def test_backend_override(self, oracle_scene_small):
        s = oracle_scene_small
        result = calibrate_from_arrays(s.top, s.bot, 1.7, backend="python")
        assert result.intrinsics.fx == pytest.approx(s.fx, rel=1e-8)


class TestPairwiseDistances:
    @staticmethod
    def rec(points):
        from posedist.core import Reconstruction

        pts = np.asarray(points, dtype=float)
        return Reconstruction(
            lambda_b=pts[:, 2],
            lambda_t=pts[:, 2],
            x_b=pts,
            x_t=pts + np.array([0.0, -1.0, 0.0]),
        )

    def test_three_four_five(self):
        d = pairwise_distances(self.rec([[0.0, 0.0, 5.0], [3.0, 4.0, 5.0]]))
        assert d[0, 1] == pytest.approx(5.0)
        assert d[1, 0] == pytest.approx(5.0)
        assert d[0, 0] == 0.0

    def test_identical_points(self):
        d = pairwise_distances(self.rec([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]))
        assert d[0, 1] == 0.0

    def test_permutation_consistency_and_triangle(self):
        pts = np.array([[0.0, 0.0, 5.0], [3.0, 4.0, 5.0], [1.0, -2.0, 8.0]])
        d = pairwise_distances(self.rec(pts))
        perm = [2, 0, 1]
        dp = pairwise_distances(self.rec(pts[perm]))
        assert np.allclose(dp, d[np.ix_(perm, perm)])
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    assert d[i, j] <= d[i, k] + d[k, j] + 1e-12
