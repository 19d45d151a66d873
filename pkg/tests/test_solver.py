import numpy as np
import pytest

from posekit.errors import DegenerateConfiguration, NoConsensus
from posekit.geom import CameraIntrinsics, Correspondence2D3D, arrays_to_corrs
from posekit.solver import (
    ProjectionMatrix,
    build_design_matrix,
    decompose,
    dlt_solve,
    dlt_weight_gradient,
    ransac_pnp,
    reprojection_residuals,
)

from conftest import exact_correspondences, random_pose


def unit_projection_matrix(K, pose) -> ProjectionMatrix:
    return ProjectionMatrix(K.matrix() @ pose.matrix34())


def random_volume_points(rng, n):
    """Distinct 3D points filling a box volume (non-coplanar)."""
    return rng.uniform(-0.3, 0.3, size=(n, 3)) * np.array([1.0, 1.2, 1.5])


def noisy_instance(rng, intrinsics, n=16, sigma=1.0):
    """A weighted-solve instance with noise, for gradient tests."""
    pose = random_pose(rng)
    pts = random_volume_points(rng, n)
    corrs = exact_correspondences(intrinsics, pose, pts)
    noisy = [
        Correspondence2D3D(c.p + rng.normal(scale=sigma, size=2), c.P) for c in corrs
    ]
    weights = rng.uniform(0.1, 1.0, size=n)
    return noisy, weights


def geo_loss(corrs, weights, mask):
    """Mean reprojection residual over a fixed inlier set, via the public
    solve path.  Finite-difference oracle for dlt_weight_gradient."""
    H = dlt_solve(corrs, weights)
    res, _ = reprojection_residuals(H, [corrs[i] for i in np.flatnonzero(mask)])
    return float(res.mean())


# ---------------------------------------------------------------------------
# design matrix


def test_design_matrix_zero_correspondence():
    c = Correspondence2D3D((0.0, 0.0), (0.0, 0.0, 0.0))
    A = build_design_matrix([c]).A
    assert np.allclose(A[0], [0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0])
    assert np.allclose(A[1], [0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0])


def test_design_matrix_block_layout():
    c = Correspondence2D3D((2.0, 3.0), (1.0, 0.0, 0.0))
    A = build_design_matrix([c]).A
    assert np.allclose(A[0], [1, 0, 0, 1, 0, 0, 0, 0, -2, 0, 0, -2])
    assert np.allclose(A[1], [0, 0, 0, 0, 1, 0, 0, 1, -3, 0, 0, -3])


def test_design_matrix_null_space(rng, intrinsics):
    for _ in range(20):
        pose = random_pose(rng)
        H = unit_projection_matrix(intrinsics, pose)
        pts = random_volume_points(rng, 10)
        q = np.hstack([pts, np.ones((10, 1))]) @ H.H.T
        p2 = q[:, :2] / q[:, 2:3]
        corrs = arrays_to_corrs(p2, pts)
        A = build_design_matrix(corrs).A
        assert np.abs(A @ H.H.ravel()).max() < 1e-9


# ---------------------------------------------------------------------------
# dlt_solve


def test_dlt_exact_corner_recovery(rng, intrinsics, box_corners):
    for _ in range(20):
        pose = random_pose(rng)
        corrs = exact_correspondences(intrinsics, pose, box_corners.points)
        H = dlt_solve(corrs)
        res, mean = reprojection_residuals(H, corrs)
        assert res.max() < 1e-6


def test_dlt_duplicate_invariance(rng, intrinsics, box_corners):
    pose = random_pose(rng)
    corrs = exact_correspondences(intrinsics, pose, box_corners.points)
    H1 = dlt_solve(corrs).H
    H2 = dlt_solve(corrs + corrs).H
    assert min(np.abs(H1 - H2).max(), np.abs(H1 + H2).max()) < 1e-12


def test_dlt_zero_weight_drops_outliers(rng, intrinsics):
    pose = random_pose(rng)
    pts = random_volume_points(rng, 12)
    corrs = exact_correspondences(intrinsics, pose, pts)
    spoiled = list(corrs)
    for i in range(4):
        spoiled[i] = Correspondence2D3D(corrs[i].p + 40.0 * (i + 1), corrs[i].P)
    weights = np.ones(12)
    weights[:4] = 0.0
    H_weighted = dlt_solve(spoiled, weights).H
    H_clean = dlt_solve(corrs[4:]).H
    assert min(np.abs(H_weighted - H_clean).max(), np.abs(H_weighted + H_clean).max()) < 1e-10


def test_dlt_requires_six_positive_weights(rng, intrinsics):
    pose = random_pose(rng)
    pts = random_volume_points(rng, 8)
    corrs = exact_correspondences(intrinsics, pose, pts)
    weights = np.ones(8)
    weights[:3] = 0.0
    with pytest.raises(DegenerateConfiguration):
        dlt_solve(corrs, weights)


def test_dlt_rejects_coplanar_points(rng, intrinsics):
    pose = random_pose(rng)
    pts = random_volume_points(rng, 10)
    pts[:, 2] = 0.05  # all on one plane: null space is ambiguous
    corrs = exact_correspondences(intrinsics, pose, pts)
    with pytest.raises(DegenerateConfiguration):
        dlt_solve(corrs)


def test_dlt_weight_scaling_invariance(rng, intrinsics):
    corrs, weights = noisy_instance(rng, intrinsics)
    H1 = dlt_solve(corrs, weights).H
    H2 = dlt_solve(corrs, 7.5 * weights).H
    assert min(np.abs(H1 - H2).max(), np.abs(H1 + H2).max()) < 1e-12


# ---------------------------------------------------------------------------
# decompose


def test_decompose_round_trip(rng, intrinsics):
    for _ in range(30):
        pose = random_pose(rng)
        H = unit_projection_matrix(intrinsics, pose)
        rec = decompose(H, intrinsics)
        cos_angle = (np.trace(rec.rotation.T @ pose.rotation) - 1.0) / 2.0
        geodesic = np.arccos(np.clip(cos_angle, -1.0, 1.0))
        assert geodesic < 1e-6
        assert np.linalg.norm(rec.translation - pose.translation) < 1e-8


def test_decompose_identity_translation():
    K = CameraIntrinsics(100.0, 100.0, 64.0, 64.0)
    from posekit.geom import Pose

    pose = Pose(np.eye(3), (0.0, 0.0, 1.0))
    rec = decompose(unit_projection_matrix(K, pose), K)
    assert np.allclose(rec.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(rec.translation, (0.0, 0.0, 1.0), atol=1e-12)


def test_decompose_sign_fixing(rng, intrinsics):
    pose = random_pose(rng)
    H = unit_projection_matrix(intrinsics, pose)
    flipped = ProjectionMatrix(-H.H)
    a = decompose(H, intrinsics)
    b = decompose(flipped, intrinsics)
    assert np.allclose(a.rotation, b.rotation, atol=1e-12)
    assert np.allclose(a.translation, b.translation, atol=1e-12)


# ---------------------------------------------------------------------------
# residuals


def test_residuals_exact(rng, intrinsics, box_corners):
    pose = random_pose(rng)
    corrs = exact_correspondences(intrinsics, pose, box_corners.points)
    res, mean = reprojection_residuals(unit_projection_matrix(intrinsics, pose), corrs)
    assert res.max() < 1e-9


def test_residuals_pixel_shift_is_euclidean(rng, intrinsics, box_corners):
    pose = random_pose(rng)
    corrs = exact_correspondences(intrinsics, pose, box_corners.points)
    shifted = list(corrs)
    shifted[2] = Correspondence2D3D(corrs[2].p + np.array([3.0, 4.0]), corrs[2].P)
    res, _ = reprojection_residuals(unit_projection_matrix(intrinsics, pose), shifted)
    assert np.isclose(res[2], 5.0, atol=1e-9)


def test_residual_mean(rng, intrinsics, box_corners):
    pose = random_pose(rng)
    corrs = exact_correspondences(intrinsics, pose, box_corners.points)[:2]
    shifted = [corrs[0], Correspondence2D3D(corrs[1].p + np.array([0.0, 5.0]), corrs[1].P)]
    _, mean = reprojection_residuals(unit_projection_matrix(intrinsics, pose), shifted)
    assert np.isclose(mean, 2.5, atol=1e-9)


# ---------------------------------------------------------------------------
# weight gradient


def test_weight_gradient_matches_finite_differences(rng, intrinsics):
    h = 1e-5
    checked = 0
    while checked < 20:
        corrs, weights = noisy_instance(rng, intrinsics)
        mask = weights > 0
        grad = dlt_weight_gradient(corrs, weights, mask)
        worst = 0.0
        for i in range(len(weights)):
            wp = weights.copy()
            wp[i] += h
            wm = weights.copy()
            wm[i] -= h
            numeric = (geo_loss(corrs, wp, mask) - geo_loss(corrs, wm, mask)) / (2 * h)
            rel = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
        assert worst < 1e-4
        checked += 1


def test_weight_gradient_uniform_scaling_direction_is_flat(rng, intrinsics):
    corrs, weights = noisy_instance(rng, intrinsics)
    grad = dlt_weight_gradient(corrs, weights)
    # H is invariant to scaling all weights; the directional derivative
    # along the weights themselves must vanish.
    assert abs(float(grad @ weights)) < 1e-8


def test_weight_gradient_zero_weight_entry(rng, intrinsics):
    # The loss depends on w_i quadratically near w_i = 0 (the weight
    # enters the normal matrix squared), so the gradient entry of a
    # zero-weighted outlier is exactly 0, and just right of zero it must
    # match finite differences taken inside the positive domain.
    corrs, weights = noisy_instance(rng, intrinsics, n=14)
    weights[3] = 0.0
    mask = weights > 0
    assert dlt_weight_gradient(corrs, weights, mask)[3] == 0.0

    eps, h = 1e-3, 1e-6
    at = weights.copy()
    at[3] = eps
    analytic = dlt_weight_gradient(corrs, at, mask)[3]
    wp, wm = at.copy(), at.copy()
    wp[3] += h
    wm[3] -= h
    numeric = (geo_loss(corrs, wp, mask) - geo_loss(corrs, wm, mask)) / (2 * h)
    assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8) < 1e-4


# ---------------------------------------------------------------------------
# ransac


def test_ransac_clean_data(rng, intrinsics):
    pose = random_pose(rng)
    pts = random_volume_points(rng, 60)
    corrs = exact_correspondences(intrinsics, pose, pts)
    result = ransac_pnp(corrs, intrinsics, iterations=50, inlier_threshold_px=3.0, seed=9)
    assert result.inlier_mask.all()
    assert np.abs(result.pose.rotation - pose.rotation).max() < 1e-6
    assert np.linalg.norm(result.pose.translation - pose.translation) < 1e-6


def test_ransac_matches_dlt_on_clean_data(rng, intrinsics):
    pose = random_pose(rng)
    pts = random_volume_points(rng, 30)
    corrs = exact_correspondences(intrinsics, pose, pts)
    result = ransac_pnp(corrs, intrinsics, iterations=20, seed=3)
    _, mean_r = reprojection_residuals(result.H, corrs)
    H = dlt_solve(corrs)
    _, mean_d = reprojection_residuals(H, corrs)
    assert abs(mean_r - mean_d) < 1e-9


def test_ransac_underdetermined():
    corrs = arrays_to_corrs(np.zeros((5, 2)), np.zeros((5, 3)))
    with pytest.raises(NoConsensus):
        ransac_pnp(corrs, CameraIntrinsics(100, 100, 64, 64))


def test_ransac_excludes_gross_outliers_across_seeds(rng, intrinsics):
    # 40% uniform outliers; the mask must exclude every outlier in at
    # least 99 of 100 seeds.
    pose = random_pose(rng)
    pts = random_volume_points(rng, 60)
    corrs = exact_correspondences(intrinsics, pose, pts)
    n_out = 24
    out_idx = rng.choice(60, size=n_out, replace=False)
    spoiled = list(corrs)
    for i in out_idx:
        p = rng.uniform(0, 128, size=2)
        while np.linalg.norm(p - corrs[i].p) < 20:
            p = rng.uniform(0, 128, size=2)
        spoiled[i] = Correspondence2D3D(p, corrs[i].P)
    failures = 0
    for seed in range(100):
        result = ransac_pnp(spoiled, intrinsics, iterations=500,
                            inlier_threshold_px=3.0, seed=seed)
        if result.inlier_mask[out_idx].any():
            failures += 1
    assert failures <= 1


def test_ransac_deterministic(rng, intrinsics):
    pose = random_pose(rng)
    pts = random_volume_points(rng, 30)
    corrs = exact_correspondences(intrinsics, pose, pts)
    a = ransac_pnp(corrs, intrinsics, iterations=40, seed=11)
    b = ransac_pnp(corrs, intrinsics, iterations=40, seed=11)
    assert np.array_equal(a.inlier_mask, b.inlier_mask)
    assert np.array_equal(a.H.H, b.H.H)
