"""Binary containers and dataset persistence.

HMS1 heatmap container:
    magic "HMS1", u32 width, u32 height, u32 channels (=8), then
    width*height*8 little-endian float32 values, channel-major,
    row-major within a channel.

NPK1 network parameter container:
    magic "NPK1", u32 format version (=1), u32 kind length + kind bytes
    ("pgm" / "corrnet" / ...), u32 config length + UTF-8 "key=value"
    lines, u32 tensor count, then per tensor: u32 name length + name,
    u32 rank, rank * u32 dims, little-endian float64 values.

Datasets are directories: params.txt (generator config), manifest.csv
(one row per scene: pose as 12 row-major floats of [R|t], intrinsics,
extents, seed), stacks/scene_<id>.hms1, pools.csv.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import (
    LabeledPool,
    LabeledScene,
    ScenarioParams,
    params_from_config,
    params_to_config,
)
from .errors import FormatError
from .geom import CameraIntrinsics, Pose, corners_from_extent, project_many
from .heatmap import NUM_CHANNELS, HeatmapStack

HMS_MAGIC = b"HMS1"
NPK_MAGIC = b"NPK1"
NPK_VERSION = 1


# ---------------------------------------------------------------------------
# HMS1


def save_heatmap_stack(stack: HeatmapStack, path) -> None:
    v = stack.values
    with open(path, "wb") as f:
        f.write(HMS_MAGIC)
        f.write(struct.pack("<III", stack.width, stack.height, v.shape[0]))
        f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_heatmap_stack(path) -> HeatmapStack:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != HMS_MAGIC:
            raise FormatError(f"bad heatmap magic {magic!r} in {path}")
        header = f.read(12)
        if len(header) != 12:
            raise FormatError(f"truncated heatmap header in {path}")
        width, height, channels = struct.unpack("<III", header)
        if channels != NUM_CHANNELS:
            raise FormatError(f"expected 8 channels, got {channels} in {path}")
        payload = f.read(4 * width * height * channels)
        if len(payload) != 4 * width * height * channels:
            raise FormatError(f"truncated heatmap payload in {path}")
    values = np.frombuffer(payload, dtype="<f4").reshape(channels, height, width)
    return HeatmapStack(values)


# ---------------------------------------------------------------------------
# NPK1


def _write_block(f, data: bytes):
    f.write(struct.pack("<I", len(data)))
    f.write(data)


def _read_block(f, what: str) -> bytes:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"truncated {what} length")
    (n,) = struct.unpack("<I", raw)
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}")
    return data


def save_net_params(
    path, kind: str, config: dict[str, str], tensors: Sequence[tuple[str, np.ndarray]]
) -> None:
    with open(path, "wb") as f:
        f.write(NPK_MAGIC)
        f.write(struct.pack("<I", NPK_VERSION))
        _write_block(f, kind.encode("utf-8"))
        cfg_text = "".join(f"{k}={v}\n" for k, v in sorted(config.items()))
        _write_block(f, cfg_text.encode("utf-8"))
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            a = np.ascontiguousarray(arr, dtype="<f8")
            _write_block(f, name.encode("utf-8"))
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_net_params(path, expected_kind: str | None = None):
    """Returns (kind, config dict, list of (name, float64 array))."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != NPK_MAGIC:
            raise FormatError(f"bad model magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != NPK_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        kind = _read_block(f, "kind tag").decode("utf-8")
        if expected_kind is not None and kind != expected_kind:
            raise FormatError(f"model kind {kind!r} does not match {expected_kind!r}")
        cfg_text = _read_block(f, "config block").decode("utf-8")
        config = {}
        for line in cfg_text.splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                config[k] = v
        (count,) = struct.unpack("<I", f.read(4))
        tensors = []
        for _ in range(count):
            name = _read_block(f, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n_values = int(np.prod(dims)) if rank else 1
            payload = f.read(8 * n_values)
            if len(payload) != 8 * n_values:
                raise FormatError(f"truncated tensor {name!r}")
            tensors.append((name, np.frombuffer(payload, dtype="<f8").reshape(dims).copy()))
    return kind, config, tensors


# ---------------------------------------------------------------------------
# dataset directory

MANIFEST_FIELDS = (
    ["scene_id"]
    + [f"pose_{i}" for i in range(12)]
    + ["fx", "fy", "cx", "cy", "dx", "dy", "dz", "seed"]
)
POOL_FIELDS = ["scene_id", "channel", "u", "v", "x", "y", "z", "inlier"]


def write_dataset(directory, scenes: Sequence[LabeledScene], params: ScenarioParams) -> None:
    root = Path(directory)
    (root / "stacks").mkdir(parents=True, exist_ok=True)
    with open(root / "params.txt", "w") as f:
        for k, v in sorted(params_to_config(params).items()):
            f.write(f"{k}={v}\n")
    with open(root / "manifest.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for i, s in enumerate(scenes):
            row = [i]
            row += [repr(float(x)) for x in s.pose.matrix34().ravel()]
            row += [repr(float(s.intrinsics.fx)), repr(float(s.intrinsics.fy)),
                    repr(float(s.intrinsics.cx)), repr(float(s.intrinsics.cy))]
            ext = np.ptp(s.corners.points, axis=0)
            row += [repr(float(e)) for e in ext]
            row += [s.seed]
            writer.writerow(row)
    with open(root / "pools.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(POOL_FIELDS)
        for i, s in enumerate(scenes):
            pool = s.pool
            for k in range(len(pool)):
                writer.writerow(
                    [i, int(pool.channel[k]),
                     repr(float(pool.p2[k, 0])), repr(float(pool.p2[k, 1])),
                     repr(float(pool.p3[k, 0])), repr(float(pool.p3[k, 1])),
                     repr(float(pool.p3[k, 2])), int(pool.label[k])]
                )
    for i, s in enumerate(scenes):
        save_heatmap_stack(s.merged, root / "stacks" / f"scene_{i:06d}.hms1")


def load_dataset(directory) -> tuple[list[LabeledScene], ScenarioParams]:
    root = Path(directory)
    cfg = {}
    with open(root / "params.txt") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                cfg[k] = v
    params = params_from_config(cfg)

    pools: dict[int, list] = {}
    with open(root / "pools.csv", newline="") as f:
        for row in csv.DictReader(f):
            pools.setdefault(int(row["scene_id"]), []).append(row)

    scenes = []
    with open(root / "manifest.csv", newline="") as f:
        for row in csv.DictReader(f):
            sid = int(row["scene_id"])
            M = np.array([float(row[f"pose_{i}"]) for i in range(12)]).reshape(3, 4)
            pose = Pose(M[:, :3], M[:, 3])
            K = CameraIntrinsics(float(row["fx"]), float(row["fy"]),
                                 float(row["cx"]), float(row["cy"]))
            corners = corners_from_extent(float(row["dx"]), float(row["dy"]),
                                          float(row["dz"]))
            merged = load_heatmap_stack(root / "stacks" / f"scene_{sid:06d}.hms1")
            rows = pools.get(sid, [])
            p2 = np.array([[float(r["u"]), float(r["v"])] for r in rows]).reshape(-1, 2)
            p3 = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
            channel = np.array([int(r["channel"]) for r in rows], dtype=int)
            label = np.array([bool(int(r["inlier"])) for r in rows], dtype=bool)
            pool = LabeledPool(p2, p3, channel, label, sigma_px=0.0, outlier_fraction=0.0)
            scenes.append(
                LabeledScene(
                    pose=pose,
                    intrinsics=K,
                    corners=corners,
                    gt_projections=project_many(K, pose, corners.points),
                    merged=merged,
                    pool=pool,
                    seed=int(row["seed"]),
                )
            )
    return scenes, params
