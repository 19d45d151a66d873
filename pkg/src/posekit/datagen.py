"""Synthetic scenes: view-sphere poses, labeled correspondence pools, and
merged-heatmap simulation with decoy peaks.

The simulator stands in for a CNN front-end: each channel gets its
ground-truth Gaussian plus 0..N decoy blobs at least 15 px away, decoys
may outshine the truth, and occluded channels have their true peak
scaled below the decoys.  It makes no attempt to imitate real network
error statistics; it exists so grouping/scoring can be trained and
compared under controlled failure modes.

All generators are deterministic per seed.  Scene-level streams derive
from (seed, tag) so scenes can be produced in parallel in any order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import RejectionExhausted
from .geom import (
    CameraIntrinsics,
    Correspondence2D3D,
    CornerSet,
    Pose,
    corners_from_extent,
    project_many,
)
from .heatmap import HeatmapStack, normalize_stack, synth_gaussian_channel

_TAG_VIEW = 101
_TAG_STACK = 102
_TAG_POOL = 103

REJECTION_BUDGET_PER_SCENE = 1000


@dataclass(frozen=True)
class ScenarioParams:
    """Knobs of the synthetic generator (desk-scale defaults)."""

    image_width: int = 64
    image_height: int = 64
    fx: float = 70.0
    fy: float = 70.0
    cx: float = 32.0
    cy: float = 32.0
    extents: tuple[float, float, float] = (0.3, 0.4, 0.5)
    radius_range: tuple[float, float] = (1.0, 1.5)
    roll_range: tuple[float, float] = (-np.pi, np.pi)
    edge_margin_px: float = 4.0
    # correspondence pools
    noise_px_range: tuple[float, float] = (0.5, 2.0)
    outlier_frac_range: tuple[float, float] = (0.0, 0.5)
    pool_per_channel: int = 60
    inlier_threshold_px: float = 3.0
    correlated_pools: bool = True
    # merged-heatmap simulation
    gaussian_sigma_px: float = 2.0
    gt_confidence_range: tuple[float, float] = (0.7, 1.0)
    decoy_count_max: int = 3  # count uniform on {0..max}
    decoy_confidence_range: tuple[float, float] = (0.8, 1.05)  # relative to truth
    decoy_min_distance_px: float = 15.0
    occlusion_prob: float = 0.3
    occlusion_scale_range: tuple[float, float] = (0.5, 0.9)  # times min decoy conf

    def __post_init__(self):
        for name in ("radius_range", "roll_range", "noise_px_range",
                     "outlier_frac_range", "gt_confidence_range",
                     "decoy_confidence_range", "occlusion_scale_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if not 0.0 <= self.outlier_frac_range[0] <= self.outlier_frac_range[1] < 1.0:
            raise ValueError("outlier fractions must lie in [0, 1)")
        if not 0.0 <= self.occlusion_prob < 1.0:
            raise ValueError("occlusion probability must lie in [0, 1)")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    @property
    def corners(self) -> CornerSet:
        return corners_from_extent(*self.extents)


@dataclass
class LabeledPool:
    """8*n correspondence hypotheses with ground-truth inlier labels."""

    p2: np.ndarray  # (N,2) pixels
    p3: np.ndarray  # (N,3) object coords
    channel: np.ndarray  # (N,) int
    label: np.ndarray  # (N,) bool, True = inlier
    sigma_px: float
    outlier_fraction: float

    def correspondences(self) -> list[Correspondence2D3D]:
        return [Correspondence2D3D(p, P) for p, P in zip(self.p2, self.p3)]

    def __len__(self):
        return self.p2.shape[0]


@dataclass
class LabeledScene:
    pose: Pose
    intrinsics: CameraIntrinsics
    corners: CornerSet
    gt_projections: np.ndarray  # (8,2), exact
    merged: HeatmapStack
    pool: LabeledPool
    seed: int


def _look_at_pose(rng: np.random.Generator, params: ScenarioParams) -> Pose:
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    radius = rng.uniform(*params.radius_range)
    cam = radius * direction
    z = -cam / np.linalg.norm(cam)
    up = np.array([0.0, 0.0, 1.0])
    if abs(z @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x0 = np.cross(up, z)
    x0 /= np.linalg.norm(x0)
    y0 = np.cross(z, x0)
    roll = rng.uniform(*params.roll_range)
    x = np.cos(roll) * x0 + np.sin(roll) * y0
    y = -np.sin(roll) * x0 + np.cos(roll) * y0
    R = np.vstack([x, y, z])
    return Pose(R, -R @ cam)


def _pose_in_frame(pose: Pose, params: ScenarioParams) -> bool:
    X = params.corners.points @ pose.rotation.T + pose.translation
    if (X[:, 2] <= 0).any():
        return False
    uv = project_many(params.intrinsics, pose, params.corners.points)
    m = params.edge_margin_px
    return bool(
        (uv[:, 0] >= m).all()
        and (uv[:, 0] <= params.image_width - 1 - m).all()
        and (uv[:, 1] >= m).all()
        and (uv[:, 1] <= params.image_height - 1 - m).all()
    )


def _sample_pose(rng: np.random.Generator, params: ScenarioParams) -> Pose:
    for _ in range(REJECTION_BUDGET_PER_SCENE):
        pose = _look_at_pose(rng, params)
        if _pose_in_frame(pose, params):
            return pose
    raise RejectionExhausted(
        f"no in-frame pose after {REJECTION_BUDGET_PER_SCENE} rejections"
    )


def sample_viewsphere(n: int, params: ScenarioParams, seed: int) -> list[Pose]:
    """n poses looking at the origin from uniform view-sphere directions.

    Camera positions are area-uniform (normalized Gaussian triples) with
    uniform in-plane roll; samples whose corners leave the image are
    rejected.  Pose i comes from its own (seed, i) stream.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    return [
        _sample_pose(np.random.default_rng([seed, _TAG_VIEW, i]), params)
        for i in range(n)
    ]


def _backproject(K: CameraIntrinsics, pose: Pose, uv: np.ndarray, depth: float) -> np.ndarray:
    """Object-frame point projecting exactly to uv at the given camera depth."""
    ray = K.inverse_matrix() @ np.array([uv[0], uv[1], 1.0])
    return pose.rotation.T @ (depth * ray - pose.translation)


def synth_pool(
    pose: Pose,
    K: CameraIntrinsics,
    corners: CornerSet,
    params: ScenarioParams,
    seed: int,
) -> LabeledPool:
    """Noisy 2D-3D hypotheses around each channel's reference projection.

    With ``correlated_pools`` (the default) all 8 channels share one
    consistent pose: references are the true corner projections.  The
    non-correlated variant re-draws each channel's 2D reference uniformly
    and back-projects it at the corner's camera depth, which keeps every
    correspondence individually valid while destroying the joint
    projected-box structure.  Labels follow the residual rule: inlier
    iff the residual under the true pose is < inlier_threshold_px.
    """
    rng = np.random.default_rng([seed, _TAG_POOL])
    sigma = rng.uniform(*params.noise_px_range)
    frac = rng.uniform(*params.outlier_frac_range)
    gt_proj = project_many(K, pose, corners.points)

    if params.correlated_pools:
        ref2d = gt_proj
        ref3d = np.asarray(corners.points)
    else:
        depths = corners.points @ pose.rotation[2] + pose.translation[2]
        ref2d = np.empty((8, 2))
        ref3d = np.empty((8, 3))
        for c in range(8):
            q = np.array(
                [rng.uniform(0, params.image_width - 1),
                 rng.uniform(0, params.image_height - 1)]
            )
            ref2d[c] = q
            ref3d[c] = _backproject(K, pose, q, depths[c])

    n = params.pool_per_channel
    p2 = np.empty((8 * n, 2))
    p3 = np.empty((8 * n, 3))
    channel = np.repeat(np.arange(8), n)
    for c in range(8):
        for j in range(n):
            k = c * n + j
            if rng.random() < frac:
                p2[k] = (rng.uniform(0, params.image_width - 1),
                         rng.uniform(0, params.image_height - 1))
            else:
                p2[k] = ref2d[c] + rng.normal(scale=sigma, size=2)
            p3[k] = ref3d[c]
    residual = np.linalg.norm(p2 - ref2d[channel], axis=1)
    label = residual < params.inlier_threshold_px
    return LabeledPool(p2, p3, channel, label, float(sigma), float(frac))


def synth_merged_stack(
    pose: Pose,
    K: CameraIntrinsics,
    corners: CornerSet,
    params: ScenarioParams,
    seed: int,
) -> LabeledScene:
    """A merged-heatmap scene with decoy peaks and occlusion failures."""
    rng = np.random.default_rng([seed, _TAG_STACK])
    gt_proj = project_many(K, pose, corners.points)
    w, h = params.image_width, params.image_height
    sig = params.gaussian_sigma_px
    values = np.zeros((8, h, w), dtype=np.float64)
    for c in range(8):
        gt_conf = rng.uniform(*params.gt_confidence_range)
        n_dec = int(rng.integers(0, params.decoy_count_max + 1))
        occluded = rng.random() < params.occlusion_prob
        if occluded:
            n_dec = max(n_dec, 1)
        decoys = []
        for _ in range(n_dec):
            for _ in range(200):
                pos = np.array([rng.uniform(0, w - 1), rng.uniform(0, h - 1)])
                if np.linalg.norm(pos - gt_proj[c]) >= params.decoy_min_distance_px:
                    decoys.append(pos)
                    break
        confs = gt_conf * rng.uniform(*params.decoy_confidence_range, size=len(decoys))
        if occluded and len(decoys):
            gt_conf = float(confs.min()) * rng.uniform(*params.occlusion_scale_range)
        chan = gt_conf * synth_gaussian_channel(gt_proj[c], sig, w, h).astype(np.float64)
        for pos, conf in zip(decoys, confs):
            chan += conf * synth_gaussian_channel(pos, sig, w, h).astype(np.float64)
        values[c] = chan
    merged = HeatmapStack(normalize_stack(np.clip(values, 0.0, None)))
    pool = synth_pool(pose, K, corners, params, seed)
    return LabeledScene(
        pose=pose,
        intrinsics=K,
        corners=corners,
        gt_projections=gt_proj,
        merged=merged,
        pool=pool,
        seed=int(seed),
    )


def scene_seed(base_seed: int, index: int) -> int:
    """Single-integer per-scene seed, storable in a manifest."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def generate_scene(params: ScenarioParams, seed: int) -> LabeledScene:
    pose = _sample_pose(np.random.default_rng([seed, _TAG_VIEW]), params)
    return synth_merged_stack(pose, params.intrinsics, params.corners, params, seed)


def generate_dataset(
    params: ScenarioParams, n: int, seed: int, threads: int = 1
) -> list[LabeledScene]:
    """n independent scenes; scene i uses scene_seed(seed, i)."""
    seeds = [scene_seed(seed, i) for i in range(n)]
    if threads <= 1:
        return [generate_scene(params, s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: generate_scene(params, s), seeds))


def params_to_config(params: ScenarioParams) -> dict[str, str]:
    out = {}
    for f in fields(params):
        v = getattr(params, f.name)
        if isinstance(v, tuple):
            out[f.name] = ",".join(repr(float(x)) for x in v)
        elif isinstance(v, bool):
            out[f.name] = "1" if v else "0"
        else:
            out[f.name] = repr(v)
    return out


def params_from_config(cfg: dict[str, str]) -> ScenarioParams:
    kwargs = {}
    for f in fields(ScenarioParams):
        if f.name not in cfg:
            continue
        raw = cfg[f.name]
        if f.name == "extents":
            kwargs[f.name] = tuple(float(x) for x in raw.split(","))
        elif isinstance(getattr(ScenarioParams, f.name, None), bool) or f.name == "correlated_pools":
            kwargs[f.name] = raw.strip() not in ("0", "false", "False")
        elif "," in raw:
            kwargs[f.name] = tuple(float(x) for x in raw.split(","))
        elif f.name in ("image_width", "image_height", "pool_per_channel", "decoy_count_max"):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = float(raw)
    return ScenarioParams(**kwargs)
