import numpy as np
import pytest

from posekit.errors import DegeneratePoint, InvalidExtent
from posekit.geom import (
    CameraIntrinsics,
    Correspondence2D3D,
    Pose,
    corners_from_extent,
    project,
    project_many,
    transform_points,
)

from conftest import homogeneous_projection_oracle, random_pose


def test_project_principal_axis(intrinsics):
    uv = project(intrinsics, Pose.identity(), (0.0, 0.0, 1.0))
    assert np.allclose(uv, (64.0, 64.0))


def test_project_offset_point(intrinsics):
    uv = project(intrinsics, Pose.identity(), (0.1, 0.0, 1.0))
    assert np.allclose(uv, (74.0, 64.0))


def test_project_matches_homogeneous_oracle(rng, intrinsics, box_corners):
    for _ in range(50):
        pose = random_pose(rng)
        P = box_corners.points[0]
        expected = homogeneous_projection_oracle(intrinsics, pose, P)
        assert np.linalg.norm(project(intrinsics, pose, P) - expected) < 1e-9


def test_project_many_matches_project(rng, intrinsics, box_corners):
    pose = random_pose(rng)
    uv = project_many(intrinsics, pose, box_corners.points)
    for i, P in enumerate(box_corners.points):
        assert np.allclose(uv[i], project(intrinsics, pose, P), atol=1e-12)


def test_project_rejects_point_behind_camera(intrinsics):
    with pytest.raises(DegeneratePoint):
        project(intrinsics, Pose.identity(), (0.0, 0.0, -1.0))
    with pytest.raises(DegeneratePoint):
        project(intrinsics, Pose.identity(), (0.0, 0.0, 0.0))


def test_corners_cube():
    c = corners_from_extent(2.0, 2.0, 2.0)
    assert np.allclose(np.abs(c.points), 1.0)


def test_corners_rectangular():
    c = corners_from_extent(1.0, 2.0, 3.0)
    assert np.allclose(np.abs(c.points[:, 0]), 0.5)
    assert np.allclose(np.abs(c.points[:, 1]), 1.0)
    assert np.allclose(np.abs(c.points[:, 2]), 1.5)


def test_corners_centroid_is_origin(rng):
    for _ in range(10):
        d = rng.uniform(0.1, 2.0, size=3)
        c = corners_from_extent(*d)
        assert np.allclose(c.points.mean(axis=0), 0.0, atol=1e-15)


def test_corner_bit_pattern_order():
    c = corners_from_extent(2.0, 4.0, 6.0)
    # index b2 b1 b0 -> sign of (x, y, z); bit set means positive
    assert np.allclose(c.points[0], (-1.0, -2.0, -3.0))
    assert np.allclose(c.points[5], (1.0, -2.0, 3.0))
    assert np.allclose(c.points[7], (1.0, 2.0, 3.0))


def test_corners_invalid_extent():
    with pytest.raises(InvalidExtent):
        corners_from_extent(0.0, 1.0, 1.0)
    with pytest.raises(InvalidExtent):
        corners_from_extent(1.0, -1.0, 1.0)


def test_transform_identity(box_corners):
    out = transform_points(Pose.identity(), box_corners.points)
    assert np.allclose(out, box_corners.points)


def test_transform_pure_translation():
    pose = Pose(np.eye(3), (0.0, 0.0, 1.0))
    out = transform_points(pose, [(0.0, 0.0, 0.0)])
    assert np.allclose(out[0], (0.0, 0.0, 1.0))


def test_transform_composition_matches_matrix_oracle(rng, box_corners):
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        chained = transform_points(a, transform_points(b, box_corners.points))
        composed = transform_points(a.compose(b), box_corners.points)
        assert np.abs(chained - composed).max() < 1e-12


def test_rigid_transform_preserves_pairwise_distances(rng, box_corners):
    pose = random_pose(rng)
    before = box_corners.points
    after = transform_points(pose, before)
    d_before = np.linalg.norm(before[:, None] - before[None, :], axis=-1)
    d_after = np.linalg.norm(after[:, None] - after[None, :], axis=-1)
    assert np.abs(d_before - d_after).max() < 1e-12


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.01, np.zeros(3))
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose(reflection, np.zeros(3))


def test_intrinsics_require_positive_focals():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)


def test_corner_set_diameter():
    c = corners_from_extent(3.0, 4.0, 12.0)
    assert np.isclose(c.diameter, 13.0)


def test_correspondence_rejects_non_finite():
    with pytest.raises(ValueError):
        Correspondence2D3D((np.nan, 0.0), (0.0, 0.0, 1.0))
