"""Heatmap stacks: synthesis, merging, peak extraction, and the FPS metric.

A stack holds one confidence channel per bounding-box corner (8 total) as
32-bit floats in [0, 1], shaped (8, height, width).  Channel i belongs to
corner i of the geom corner ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyEvaluation

NUM_CHANNELS = 8
CHANNEL_PRESENT_TOL = 1e-9
DEFAULT_DETECTION_FLOOR = 0.1
DEFAULT_NMS_RADIUS = 5.0
DEFAULT_CLUSTER_RADIUS = 10.0
DEFAULT_GT_SIGMA = 2.0


@dataclass(frozen=True)
class HeatmapStack:
    """8-channel confidence grid, values float32 in [0, 1]."""

    values: np.ndarray  # (8, height, width)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[0] != NUM_CHANNELS:
            raise DimensionMismatch(f"expected (8, h, w) values, got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0 + 1e-6):
            raise ValueError("heatmap confidences must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def synth_gaussian_channel(
    center, sigma: float, width: int, height: int
) -> np.ndarray:
    """One isotropic Gaussian blob, renormalized so the nearest grid point
    to ``center`` carries value 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    cu, cv = float(center[0]), float(center[1])
    u = np.arange(width, dtype=np.float64)
    v = np.arange(height, dtype=np.float64)
    du2 = (u - cu) ** 2
    dv2 = (v - cv) ** 2
    chan = np.exp(-(dv2[:, None] + du2[None, :]) / (2.0 * sigma**2))
    peak = chan.max()
    if peak > 0:
        chan = chan / peak
    return chan.astype(np.float32)


def normalize_stack(values: np.ndarray) -> np.ndarray:
    """Scale each channel to max 1; channels with max < 1e-9 pass through."""
    out = np.array(values, dtype=np.float32)
    for c in range(out.shape[0]):
        m = out[c].max()
        if m >= CHANNEL_PRESENT_TOL:
            out[c] /= m
    return out


def merge(stacks: Sequence[HeatmapStack]) -> HeatmapStack:
    """Element-wise average followed by per-channel re-normalization."""
    if len(stacks) == 0:
        raise DimensionMismatch("cannot merge an empty stack list")
    shape = stacks[0].values.shape
    for s in stacks[1:]:
        if s.values.shape != shape:
            raise DimensionMismatch(f"stack shapes differ: {s.values.shape} vs {shape}")
    acc = np.zeros(shape, dtype=np.float64)
    for s in stacks:
        acc += s.values
    acc /= len(stacks)
    return HeatmapStack(normalize_stack(acc))


def local_maxima(
    channel: np.ndarray,
    floor: float = DEFAULT_DETECTION_FLOOR,
    nms_radius: float = DEFAULT_NMS_RADIUS,
) -> list[tuple[int, int, float]]:
    """Greedy non-maximum suppression.

    Repeatedly takes the highest remaining value >= floor and suppresses
    the closed disc of ``nms_radius`` around it.  Returns (u, v,
    confidence) sorted by confidence descending; may be empty.
    """
    if nms_radius < 1:
        raise ValueError("nms_radius must be >= 1")
    work = np.array(channel, dtype=np.float64)
    h, w = work.shape
    vv, uu = np.mgrid[0:h, 0:w]
    peaks: list[tuple[int, int, float]] = []
    r2 = nms_radius**2
    while True:
        flat = int(np.argmax(work))
        pv, pu = divmod(flat, w)
        val = work[pv, pu]
        if val < floor:
            break
        peaks.append((int(pu), int(pv), float(val)))
        work[(uu - pu) ** 2 + (vv - pv) ** 2 <= r2] = -np.inf
    return peaks


def max_grouping(stack: HeatmapStack) -> list[Optional[tuple[int, int]]]:
    """Per-channel global argmax; None for channels with max < 1e-9.

    This is the layer-by-layer baseline the grouping network replaces;
    its failure mode is exactly that a brighter decoy cluster wins.
    """
    out: list[Optional[tuple[int, int]]] = []
    for c in range(NUM_CHANNELS):
        chan = stack.values[c]
        if chan.max() < CHANNEL_PRESENT_TOL:
            out.append(None)
            continue
        flat = int(np.argmax(chan))
        v, u = divmod(flat, stack.width)
        out.append((u, v))
    return out


def fps_count(
    selections: Sequence[Sequence[Optional[tuple]]],
    gt: Sequence[Sequence[tuple]],
    cluster_radius: float = DEFAULT_CLUSTER_RADIUS,
) -> float:
    """False projection selections per hundred channels.

    A selection is correct iff it lies within the closed ball of
    ``cluster_radius`` around the matching ground-truth projection;
    absent selections count as false.
    """
    if len(selections) != len(gt):
        raise ValueError("selection and ground-truth lists differ in length")
    channels = 0
    false = 0
    for sel_group, gt_group in zip(selections, gt):
        for sel, ref in zip(sel_group, gt_group):
            channels += 1
            if sel is None:
                false += 1
                continue
            d = np.hypot(sel[0] - ref[0], sel[1] - ref[1])
            if d > cluster_radius:
                false += 1
    if channels == 0:
        raise EmptyEvaluation("no channels to evaluate")
    return 100.0 * false / channels
