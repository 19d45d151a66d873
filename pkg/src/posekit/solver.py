"""DLT pose solving from 2D-3D correspondences.

The projection matrix H satisfies ``p_i ~ H @ [P_i; 1]`` for every
correspondence.  Stacking the two linear constraints each correspondence
places on vec(H) gives a 2Nx12 design matrix A; the solve takes the unit
singular vector of (the optionally row-weighted) A for the smallest
singular value.  Coordinates are Hartley-normalized (centroid shift plus
isotropic scaling) before the SVD and the result is mapped back, which is
what keeps the system well conditioned at pixel scale.

The gradient path used for training goes through the smallest eigenvector
of M = A^T W^2 A.  For a simple eigenvalue the eigenvector derivative is

    dh = -(M - lambda_min I)^+  dM  h,

so the loss gradient w.r.t. the per-correspondence weights reduces to a
couple of matrix-vector products (see ``dlt_weight_gradient``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateConfiguration, DegeneratePoint, IllConditioned, NoConsensus
from .geom import (
    CameraIntrinsics,
    Correspondence2D3D,
    Pose,
    corrs_to_arrays,
)

MIN_CORRESPONDENCES = 6
SINGULAR_GAP_TOL = 1e-12
EIGEN_GAP_TOL = 1e-10
CONDITION_TOL = 1e-6  # sigma_3/sigma_1 floor for decompose


@dataclass(frozen=True)
class ProjectionMatrix:
    """3x4 projection matrix with unit Frobenius norm."""

    H: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=np.float64).reshape(3, 4)
        n = np.linalg.norm(H)
        if n == 0.0 or not np.isfinite(n):
            raise ValueError("projection matrix must be finite and nonzero")
        H = H / n
        H.flags.writeable = False
        object.__setattr__(self, "H", H)


@dataclass(frozen=True)
class DesignMatrix:
    """Stacked 2Nx12 correspondence constraints ``A @ vec(H) = 0``."""

    A: np.ndarray
    N: int


def build_design_matrix(corrs: Sequence[Correspondence2D3D]) -> DesignMatrix:
    """Two rows per correspondence:

        [x y z 1 0 0 0 0 -ux -uy -uz -u]
        [0 0 0 0 x y z 1 -vx -vy -vz -v]

    vec(H) is the row-major flattening of H.
    """
    p2, p3 = corrs_to_arrays(corrs)
    return DesignMatrix(_design_rows(p2, p3), len(corrs))


def _design_rows(p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    n = p2.shape[0]
    if n < 1:
        raise DegenerateConfiguration("need at least one correspondence")
    ph = np.hstack([p3, np.ones((n, 1))])  # (N,4) homogeneous points
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = ph
    A[0::2, 8:12] = -p2[:, 0:1] * ph
    A[1::2, 4:8] = ph
    A[1::2, 8:12] = -p2[:, 1:2] * ph
    return A


def _hartley_transforms(p2: np.ndarray, p3: np.ndarray):
    """Similarity transforms taking the data to centroid 0 and mean
    distance sqrt(2) (2D) / sqrt(3) (3D).  Computed over *all*
    correspondences regardless of weights so the weighted solve stays a
    smooth function of the weights."""
    c2 = p2.mean(axis=0)
    d2 = np.linalg.norm(p2 - c2, axis=1).mean()
    s2 = np.sqrt(2.0) / d2 if d2 > 1e-12 else 1.0
    T2 = np.array([[s2, 0.0, -s2 * c2[0]], [0.0, s2, -s2 * c2[1]], [0.0, 0.0, 1.0]])
    T2inv = np.array(
        [[1.0 / s2, 0.0, c2[0]], [0.0, 1.0 / s2, c2[1]], [0.0, 0.0, 1.0]]
    )
    c3 = p3.mean(axis=0)
    d3 = np.linalg.norm(p3 - c3, axis=1).mean()
    s3 = np.sqrt(3.0) / d3 if d3 > 1e-12 else 1.0
    U3 = np.eye(4)
    U3[:3, :3] *= s3
    U3[:3, 3] = -s3 * c3
    return T2, T2inv, U3


def _normalized_system(p2: np.ndarray, p3: np.ndarray):
    T2, T2inv, U3 = _hartley_transforms(p2, p3)
    p2n = (p2 - (p2.mean(axis=0))) * T2[0, 0]
    p3n = (p3 - p3.mean(axis=0)) * U3[0, 0]
    return _design_rows(p2n, p3n), T2inv, U3


def _denormalize(h: np.ndarray, T2inv: np.ndarray, U3: np.ndarray) -> np.ndarray:
    return T2inv @ h.reshape(3, 4) @ U3


def _fix_sign(H: np.ndarray, p3: np.ndarray) -> np.ndarray:
    centroid_h = np.append(p3.mean(axis=0), 1.0)
    if (H @ centroid_h)[2] < 0:
        return -H
    return H


def dlt_solve(
    corrs: Sequence[Correspondence2D3D],
    weights: Optional[np.ndarray] = None,
) -> ProjectionMatrix:
    """Weighted homogeneous least-squares solve for H.

    Minimizes ||W A vec(H)|| over unit vec(H), where each
    correspondence's row pair is scaled by its weight (all ones when
    ``weights`` is None).  The sign is fixed so the 3D centroid
    reprojects with positive depth.
    """
    p2, p3 = corrs_to_arrays(corrs)
    n = p2.shape[0]
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(n)
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
    if int((w > 0).sum()) < MIN_CORRESPONDENCES:
        raise DegenerateConfiguration(
            f"need >= {MIN_CORRESPONDENCES} positively weighted correspondences"
        )
    An, T2inv, U3 = _normalized_system(p2, p3)
    WA = An * np.repeat(w, 2)[:, None]
    _, S, Vt = np.linalg.svd(WA, full_matrices=False)
    if S[-2] - S[-1] < SINGULAR_GAP_TOL:
        raise DegenerateConfiguration(
            "singular-value gap below 1e-12: configuration is rank-deficient/ambiguous"
        )
    H = _denormalize(Vt[-1], T2inv, U3)
    return ProjectionMatrix(_fix_sign(H, p3))


def reprojection_residuals(
    H: ProjectionMatrix, corrs: Sequence[Correspondence2D3D]
) -> tuple[np.ndarray, float]:
    """Per-correspondence pixel errors ``||dehomog(H P~) - p||`` and their mean."""
    p2, p3 = corrs_to_arrays(corrs)
    res = _residuals(H.H, p2, p3)
    return res, float(res.mean())


def _residuals(H: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    q = np.hstack([p3, np.ones((p3.shape[0], 1))]) @ H.T  # (N,3)
    depth = q[:, 2]
    if (np.abs(depth) < 1e-12).any():
        raise DegeneratePoint("zero homogeneous depth during reprojection")
    return np.linalg.norm(q[:, :2] / depth[:, None] - p2, axis=1)


def decompose(H: ProjectionMatrix, K: CameraIntrinsics) -> Pose:
    """Recover a metric pose from a projection matrix.

    M = K^-1 H is scaled so its left 3x3 has mean singular value 1 (sign
    chosen from det so the result is a proper rotation) and then
    projected onto SO(3).
    """
    M = K.inverse_matrix() @ H.H
    M33 = M[:, :3]
    U, s, Vt = np.linalg.svd(M33)
    if s[2] / s[0] < CONDITION_TOL:
        raise DegenerateConfiguration("left 3x3 of K^-1 H is near-singular")
    sign = 1.0 if np.linalg.det(M33) > 0 else -1.0
    scale = sign * 3.0 / s.sum()
    B = scale * M33
    Ub, _, Vbt = np.linalg.svd(B)
    R = Ub @ np.diag([1.0, 1.0, np.linalg.det(Ub @ Vbt)]) @ Vbt
    t = scale * M[:, 3]
    return Pose(R, t)


def dlt_weight_gradient(
    corrs: Sequence[Correspondence2D3D],
    weights: np.ndarray,
    inlier_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Analytic gradient of the mean reprojection error over predicted
    inliers w.r.t. the correspondence weights, through the smallest
    eigenvector of M = A^T W^2 A.

    ``inlier_mask`` fixes the set the loss averages over (default:
    weights > 0); the mask is held constant, only the solve depends on
    the weights.  Raises IllConditioned when the eigen-gap of M is below
    1e-10, in which case callers should drop the geometric term for this
    sample.
    """
    p2, p3 = corrs_to_arrays(corrs)
    n = p2.shape[0]
    w = np.asarray(weights, dtype=np.float64).reshape(n)
    if inlier_mask is None:
        inlier_mask = w > 0
    mask = np.asarray(inlier_mask, dtype=bool).reshape(n)
    if int(mask.sum()) < MIN_CORRESPONDENCES:
        raise DegenerateConfiguration("need >= 6 predicted inliers for the geometric loss")

    An, T2inv, U3 = _normalized_system(p2, p3)
    w2 = np.repeat(w, 2) ** 2
    M = An.T @ (An * w2[:, None])
    lam, V = np.linalg.eigh(M)
    if lam[1] - lam[0] <= EIGEN_GAP_TOL:
        raise IllConditioned("eigen-gap of A^T W^2 A below 1e-10")
    h = V[:, 0]

    # dL/dh via the denormalized, un-rescaled H (the loss is projective
    # scale/sign invariant, so skipping the final normalization is exact).
    Hd = _denormalize(h, T2inv, U3)
    ph = np.hstack([p3, np.ones((n, 1))])
    q = ph @ Hd.T
    depth = q[:, 2]
    if (np.abs(depth[mask]) < 1e-12).any():
        raise DegeneratePoint("zero homogeneous depth during gradient evaluation")
    uv = q[:, :2] / depth[:, None]
    diff = uv - p2
    r = np.linalg.norm(diff, axis=1)
    n_h = int(mask.sum())
    dHd = np.zeros((3, 4))
    for i in np.flatnonzero(mask):
        if r[i] < 1e-15:
            continue  # measure-zero kink of the Euclidean norm
        alpha = diff[i] / (r[i] * n_h)
        dHd[0] += alpha[0] * ph[i] / depth[i]
        dHd[1] += alpha[1] * ph[i] / depth[i]
        dHd[2] -= (alpha @ uv[i]) * ph[i] / depth[i]
    g = (T2inv.T @ dHd @ U3.T).ravel()

    # dh/dw_i = -(M - lambda I)^+ (2 w_i A_i^T A_i) h
    inv_gap = 1.0 / (lam[1:] - lam[0])
    u = V[:, 1:] @ (inv_gap * (V[:, 1:].T @ g))
    Au = An @ u
    Ah = An @ h
    pair = (Au * Ah).reshape(n, 2).sum(axis=1)
    return -2.0 * w * pair


@dataclass(frozen=True)
class RansacResult:
    pose: Pose
    H: ProjectionMatrix
    inlier_mask: np.ndarray
    iterations_used: int


def ransac_pnp(
    corrs: Sequence[Correspondence2D3D],
    K: CameraIntrinsics,
    iterations: int = 500,
    inlier_threshold_px: float = 3.0,
    seed: int = 0,
) -> RansacResult:
    """Classic hypothesize-and-verify loop over minimal 6-point DLT solves.

    Minimal samples draw from distinct 3D points when the set contains at
    least 6 of them (hypothesis pools repeat each corner many times, and a
    sample with duplicate 3D points can never be resolved).  The pose is
    refit on the best consensus set.  Per-iteration RNG streams derive
    from (seed, iteration) so any evaluation order gives the same result.
    """
    p2, p3 = corrs_to_arrays(corrs)
    n = p2.shape[0]
    if n < MIN_CORRESPONDENCES:
        raise NoConsensus(f"need >= {MIN_CORRESPONDENCES} correspondences, got {n}")

    uniq, group_ids = np.unique(p3, axis=0, return_inverse=True)
    n_groups = uniq.shape[0]
    by_group = [np.flatnonzero(group_ids == g) for g in range(n_groups)]
    corr_list = list(corrs)

    best_count = 0
    best_mask: Optional[np.ndarray] = None
    for it in range(iterations):
        rng = np.random.default_rng([seed, it])
        if n_groups >= MIN_CORRESPONDENCES:
            groups = rng.choice(n_groups, size=MIN_CORRESPONDENCES, replace=False)
            idx = np.array([by_group[g][rng.integers(len(by_group[g]))] for g in groups])
        else:
            idx = rng.choice(n, size=MIN_CORRESPONDENCES, replace=False)
        try:
            cand = dlt_solve([corr_list[i] for i in idx])
        except DegenerateConfiguration:
            continue
        try:
            res = _residuals(cand.H, p2, p3)
        except DegeneratePoint:
            continue
        mask = res < inlier_threshold_px
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None or best_count < MIN_CORRESPONDENCES:
        raise NoConsensus("no iteration produced a consensus of >= 6 inliers")

    refit_idx = np.flatnonzero(best_mask)
    H = dlt_solve([corr_list[i] for i in refit_idx])
    pose = decompose(H, K)
    return RansacResult(pose=pose, H=H, inlier_mask=best_mask, iterations_used=iterations)
