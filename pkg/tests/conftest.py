"""Shared fixtures and synthetic-scene helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from posekit.geom import CameraIntrinsics, Correspondence2D3D, Pose, corners_from_extent


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random rotation via QR of a Gaussian matrix."""
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Q) < 0:
        Q[:, 2] = -Q[:, 2]
    return Q


def random_pose(rng: np.random.Generator, depth: float = 1.2) -> Pose:
    """Random orientation, translation keeping the origin in front."""
    R = random_rotation(rng)
    t = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                  depth + rng.uniform(-0.2, 0.4)])
    return Pose(R, t)


def homogeneous_projection_oracle(K: CameraIntrinsics, pose: Pose, P) -> np.ndarray:
    """Independent projection: build K [R|t], multiply, dehomogenize."""
    M = K.matrix() @ np.hstack([pose.rotation, pose.translation[:, None]])
    q = M @ np.append(np.asarray(P, dtype=np.float64), 1.0)
    return q[:2] / q[2]


def exact_correspondences(K, pose, points) -> list[Correspondence2D3D]:
    return [
        Correspondence2D3D(homogeneous_projection_oracle(K, pose, P), P)
        for P in np.asarray(points, dtype=np.float64).reshape(-1, 3)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=64.0)


@pytest.fixture
def box_corners():
    return corners_from_extent(0.3, 0.4, 0.5)
