"""Core geometric types and the pinhole projection.

Conventions used throughout the package:

* Poses map object coordinates to camera coordinates, ``X_cam = R @ P + t``.
* Pixel coordinates are ``(u, v)`` with ``u`` along image columns (width)
  and ``v`` along rows (height).
* Bounding-box corner index ``i`` encodes the sign pattern ``b2 b1 b0``
  of ``(x, y, z)``: bit 2 set means +x, bit 1 means +y, bit 0 means +z.
  Corner 0 is ``(-dx/2, -dy/2, -dz/2)``, corner 7 is ``(+dx/2, +dy/2,
  +dz/2)``.  Heatmap channel ``i`` always refers to corner ``i``.

All geometry is carried in 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegeneratePoint, InvalidExtent

MIN_PROJECTION_DEPTH = 1e-12
ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid motion: ``X_cam = rotation @ P + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if np.linalg.norm(R.T @ R - np.eye(3)) >= ORTHONORMALITY_TOL:
            raise ValueError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) >= ORTHONORMALITY_TOL:
            raise ValueError("rotation matrix must have determinant +1")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def matrix34(self) -> np.ndarray:
        """The 3x4 matrix ``[R | t]``."""
        return np.hstack([self.rotation, self.translation[:, None]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels (no distortion model)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class CornerSet:
    """The 8 ordered vertices of an axis-aligned box in object coordinates."""

    points: np.ndarray  # (8, 3)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(8, 3)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        for axis in range(3):
            if len(np.unique(pts[:, axis])) != 2:
                raise ValueError(
                    "corner coordinates must take exactly 2 distinct values per axis"
                )

    @property
    def diameter(self) -> float:
        """Largest pairwise corner distance (the box space diagonal)."""
        d = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def __iter__(self):
        return iter(self.points)


@dataclass(frozen=True)
class Correspondence2D3D:
    """A pixel location paired with a 3D point in object coordinates."""

    p: np.ndarray  # (2,) pixels
    P: np.ndarray  # (3,) meters

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64).reshape(2)
        P = np.array(self.P, dtype=np.float64).reshape(3)
        if not (np.isfinite(p).all() and np.isfinite(P).all()):
            raise ValueError("correspondence coordinates must be finite")
        p.flags.writeable = False
        P.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "P", P)


def corrs_to_arrays(
    corrs: Sequence[Correspondence2D3D],
) -> tuple[np.ndarray, np.ndarray]:
    """Split a correspondence list into (N,2) pixel and (N,3) point arrays."""
    p2 = np.array([c.p for c in corrs], dtype=np.float64).reshape(-1, 2)
    p3 = np.array([c.P for c in corrs], dtype=np.float64).reshape(-1, 3)
    return p2, p3


def arrays_to_corrs(p2: np.ndarray, p3: np.ndarray) -> list[Correspondence2D3D]:
    return [Correspondence2D3D(p, P) for p, P in zip(np.asarray(p2), np.asarray(p3))]


def project(K: CameraIntrinsics, pose: Pose, P) -> np.ndarray:
    """Project one object-frame point to pixels through the pinhole model.

    Raises DegeneratePoint if the camera-frame depth is <= 1e-12.
    """
    X = pose.rotation @ np.asarray(P, dtype=np.float64).reshape(3) + pose.translation
    if X[2] <= MIN_PROJECTION_DEPTH:
        raise DegeneratePoint(f"point depth {X[2]:.3e} is not in front of the camera")
    return np.array([K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy])


def project_many(K: CameraIntrinsics, pose: Pose, points) -> np.ndarray:
    """Project an (N,3) array of points; returns (N,2) pixels."""
    X = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ pose.rotation.T
    X = X + pose.translation
    if (X[:, 2] <= MIN_PROJECTION_DEPTH).any():
        raise DegeneratePoint("at least one point is not in front of the camera")
    uv = X[:, :2] / X[:, 2:3]
    return uv * np.array([K.fx, K.fy]) + np.array([K.cx, K.cy])


def corners_from_extent(dx: float, dy: float, dz: float) -> CornerSet:
    """Corners of the box [-dx/2,dx/2] x [-dy/2,dy/2] x [-dz/2,dz/2].

    Corner order follows the bit-pattern convention documented at module
    level; it is what ties heatmap channel i to corner i in every
    serialized artifact, so it must never change.
    """
    if not (dx > 0 and dy > 0 and dz > 0):
        raise InvalidExtent(f"extents must be positive, got ({dx}, {dy}, {dz})")
    half = np.array([dx, dy, dz]) / 2.0
    pts = np.empty((8, 3))
    for i in range(8):
        signs = np.array(
            [1.0 if i & 4 else -1.0, 1.0 if i & 2 else -1.0, 1.0 if i & 1 else -1.0]
        )
        pts[i] = signs * half
    return CornerSet(pts)


def transform_points(pose: Pose, points: Iterable) -> np.ndarray:
    """Apply ``R @ P + t`` to each point; returns (N,3)."""
    pts = np.asarray(list(points) if not isinstance(points, np.ndarray) else points,
                     dtype=np.float64).reshape(-1, 3)
    return pts @ pose.rotation.T + pose.translation
