"""Projection grouping: a dense residual network that rescores merged
heatmaps so each channel keeps a single, cross-channel-consistent peak.

The network flattens the 8-channel stack, runs it through one or two
hidden dense layers, maps back to the input size, optionally adds the
flattened input (the residual shortcut), and applies a softmax
independently over each channel's spatial bins.  With a zero-initialized
output layer and the shortcut on, the initial behaviour therefore
reduces to a per-channel softmax of the input: selection starts out
identical to the per-channel argmax baseline and training moves it away
from decoys.

Stacks at other resolutions are adapted by a deterministic crop of the
tight bounding box of all detected peaks (padded 20%), bilinearly
resampled to the network resolution; selected projections are mapped
back through the inverse affine transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nnet
from .errors import NonFiniteLoss, ShapeMismatch
from .heatmap import (
    DEFAULT_DETECTION_FLOOR,
    DEFAULT_GT_SIGMA,
    DEFAULT_NMS_RADIUS,
    NUM_CHANNELS,
    HeatmapStack,
    local_maxima,
    normalize_stack,
    synth_gaussian_channel,
)

DROPOUT_RATE = 0.5
PAD_FRACTION = 0.2
MIN_CROP_SPAN = 8.0

_TAG_INIT = 11
_TAG_EPOCH = 12


@dataclass(frozen=True)
class PgmConfig:
    """Architecture knobs; ``name`` follows the PG-x-y [w/o SC][+D] scheme."""

    layers: int = 2  # hidden dense layers (1 or 2)
    hidden: int = 2048
    shortcut: bool = True
    dropout: bool = True
    resolution: tuple[int, int] = (32, 32)  # (width, height)

    def __post_init__(self):
        if self.layers not in (1, 2):
            raise ValueError("layers must be 1 or 2")

    @property
    def name(self) -> str:
        n = f"PG-{self.layers}-{self.hidden}"
        if not self.shortcut:
            n += " w/o SC"
        if self.dropout:
            n += "+D"
        return n

    @property
    def flat_size(self) -> int:
        return NUM_CHANNELS * self.resolution[0] * self.resolution[1]

    def to_config_dict(self) -> dict[str, str]:
        return {
            "layers": str(self.layers),
            "hidden": str(self.hidden),
            "shortcut": "1" if self.shortcut else "0",
            "dropout": "1" if self.dropout else "0",
            "resolution": f"{self.resolution[0]}x{self.resolution[1]}",
        }

    @staticmethod
    def from_config_dict(cfg: dict[str, str]) -> "PgmConfig":
        w, _, h = cfg["resolution"].partition("x")
        return PgmConfig(
            layers=int(cfg["layers"]),
            hidden=int(cfg["hidden"]),
            shortcut=cfg["shortcut"] == "1",
            dropout=cfg["dropout"] == "1",
            resolution=(int(w), int(h)),
        )


def sweep_configs(resolution=(32, 32)) -> list[PgmConfig]:
    """The configuration grid of the grouping-module comparison: both
    depths, both widths, with and without the shortcut, dropout on."""
    out = []
    for layers in (1, 2):
        for hidden in (1024, 2048):
            for shortcut in (True, False):
                out.append(PgmConfig(layers, hidden, shortcut, True, resolution))
    return out


class PgmModel:
    """Parameters plus forward/backward for one PgmConfig."""

    def __init__(self, config: PgmConfig, params: list[nnet.ParamTensor]):
        self.config = config
        self.params = params

    @staticmethod
    def init(config: PgmConfig, seed: int) -> "PgmModel":
        rng = np.random.default_rng([seed, _TAG_INIT])
        n = config.flat_size
        sizes = [n] + [config.hidden] * config.layers + [n]
        params = []
        for k in range(len(sizes) - 1):
            last = k == len(sizes) - 2
            if last and config.shortcut:
                W = np.zeros((sizes[k], sizes[k + 1]))
            else:
                W = nnet.glorot(rng, sizes[k], sizes[k + 1])
            params.append(nnet.ParamTensor.create(f"dense{k}.W", W))
            params.append(nnet.ParamTensor.create(f"dense{k}.b", np.zeros(sizes[k + 1])))
        return PgmModel(config, params)

    def zero_grads(self):
        for p in self.params:
            p.zero_grad()

    def forward_batch(
        self,
        x: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ):
        """x: (batch, 8*w*h) float64 -> (logits, cache)."""
        if x.ndim != 2 or x.shape[1] != self.config.flat_size:
            raise ShapeMismatch(
                f"expected (batch, {self.config.flat_size}) input, got {x.shape}"
            )
        n_dense = self.config.layers + 1
        acts = []  # (pre_relu, post_dropout_input_to_next)
        h = x
        drop_mask = None
        for k in range(n_dense - 1):
            W, b = self.params[2 * k].value, self.params[2 * k + 1].value
            z = nnet.dense_forward(h, W, b)
            a = nnet.relu_forward(z)
            if k == 0 and self.config.dropout:
                a, drop_mask = nnet.dropout_forward(a, DROPOUT_RATE, training, rng)
            acts.append((h, z, a))
            h = a
        W, b = self.params[2 * (n_dense - 1)].value, self.params[2 * (n_dense - 1) + 1].value
        logits = nnet.dense_forward(h, W, b)
        if self.config.shortcut:
            logits = logits + x
        return logits, (x, acts, h, drop_mask)

    def backward_batch(self, cache, dlogits: np.ndarray) -> None:
        """Accumulates parameter gradients in place."""
        x, acts, h_last, drop_mask = cache
        n_dense = self.config.layers + 1
        W_out = self.params[2 * (n_dense - 1)].value
        dh, dW, db = nnet.dense_backward(h_last, W_out, dlogits)
        self.params[2 * (n_dense - 1)].grad += dW
        self.params[2 * (n_dense - 1) + 1].grad += db
        for k in reversed(range(n_dense - 1)):
            h_in, z, _ = acts[k]
            if k == 0 and self.config.dropout:
                dh = nnet.dropout_backward(drop_mask, dh)
            dz = nnet.relu_backward(z, dh)
            dh, dW, db = nnet.dense_backward(h_in, self.params[2 * k].value, dz)
            self.params[2 * k].grad += dW
            self.params[2 * k + 1].grad += db

    def to_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.value) for p in self.params]

    @staticmethod
    def from_tensors(config: PgmConfig, tensors) -> "PgmModel":
        params = [nnet.ParamTensor.create(name, arr) for name, arr in tensors]
        return PgmModel(config, params)


def pgm_forward(
    model: PgmModel,
    merged: HeatmapStack,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> HeatmapStack:
    """Filter one stack; output channels are per-channel softmax
    distributions (each sums to 1)."""
    w, h = model.config.resolution
    if (merged.width, merged.height) != (w, h):
        raise ShapeMismatch(
            f"stack is {merged.width}x{merged.height}, model wants {w}x{h}"
        )
    x = merged.values.astype(np.float64).reshape(1, -1)
    logits, _ = model.forward_batch(x, training=training, rng=rng)
    probs = nnet.softmax(logits.reshape(NUM_CHANNELS, w * h), axis=-1)
    return HeatmapStack(probs.reshape(NUM_CHANNELS, h, w).astype(np.float32))


def select_projections(filtered: HeatmapStack):
    """Per-channel argmax location and value; exact ties resolve to the
    smallest (v, u) in lexicographic order (argmax scan order)."""
    sels = []
    confs = np.empty(NUM_CHANNELS)
    for c in range(NUM_CHANNELS):
        chan = filtered.values[c]
        flat = int(np.argmax(chan))
        v, u = divmod(flat, filtered.width)
        sels.append((u, v))
        confs[c] = chan[v, u]
    return sels, confs


def make_targets(gt_stack: HeatmapStack) -> np.ndarray:
    """Flatten a max-normalized GT stack into per-channel distributions
    (each channel rescaled to sum 1), so cross entropy compares the
    softmax output against a distribution."""
    t = gt_stack.values.astype(np.float64).reshape(NUM_CHANNELS, -1)
    sums = t.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        raise ValueError("ground-truth stack has an empty channel")
    return (t / sums).ravel()


def pgm_loss(logits: np.ndarray, targets: np.ndarray):
    """Sum over the 8 per-channel cross entropies, averaged over the batch.

    logits/targets: (batch, 8*w*h); target channels must each sum to 1.
    Returns (loss, dlogits).
    """
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    batch = logits.shape[0]
    rows = logits.reshape(batch * NUM_CHANNELS, -1)
    trows = targets.reshape(batch * NUM_CHANNELS, -1)
    z = rows - rows.max(axis=1, keepdims=True)
    log_s = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(trows * log_s).sum() / batch)
    dlogits = ((np.exp(log_s) - trows) / batch).reshape(logits.shape)
    return loss, dlogits


def pgm_train(
    dataset: Sequence[tuple[HeatmapStack, HeatmapStack]],
    config: PgmConfig,
    epochs: int,
    seed: int,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    model: Optional[PgmModel] = None,
    start_epoch: int = 0,
    optimizer: Optional[nnet.OptimizerState] = None,
    epoch_callback=None,
):
    """Train on (merged, ground-truth) stack pairs at the config resolution.

    Deterministic per seed: epoch e draws its shuffle and dropout from the
    (seed, epoch) stream, so a run resumed from a checkpoint retraces the
    uninterrupted trajectory.  Returns (model, per-step losses).
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    w, h = config.resolution
    for merged, gt in dataset:
        if (merged.width, merged.height) != (w, h) or (gt.width, gt.height) != (w, h):
            raise ShapeMismatch("all training stacks must be at the config resolution")
    X = np.stack([m.values.astype(np.float64).ravel() for m, _ in dataset])
    T = np.stack([make_targets(g) for _, g in dataset])

    if model is None:
        model = PgmModel.init(config, seed)
    state = optimizer if optimizer is not None else nnet.OptimizerState(
        learning_rate=learning_rate
    )
    losses: list[float] = []
    n = X.shape[0]
    for epoch in range(start_epoch, epochs):
        rng = np.random.default_rng([seed, _TAG_EPOCH, epoch])
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            logits, cache = model.forward_batch(X[idx], training=True, rng=rng)
            loss, dlogits = pgm_loss(logits, T[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite grouping loss at epoch {epoch}, batch offset {lo}"
                )
            model.zero_grads()
            model.backward_batch(cache, dlogits)
            nnet.adam_step(model.params, state)
            losses.append(loss)
        if epoch_callback is not None:
            epoch_callback(epoch, model, state, losses)
    return model, losses


# ---------------------------------------------------------------------------
# resolution adjustment (peak-box crop + bilinear resample)


@dataclass(frozen=True)
class ViewTransform:
    """Affine pixel mapping net = (img - offset) * scale, per axis."""

    x0: float
    y0: float
    sx: float
    sy: float

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return (p - [self.x0, self.y0]) * [self.sx, self.sy]

    def invert(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return p / [self.sx, self.sy] + [self.x0, self.y0]


def fit_view_transform(
    stack: HeatmapStack,
    out_size: tuple[int, int],
    floor: float = DEFAULT_DETECTION_FLOOR,
    nms_radius: float = DEFAULT_NMS_RADIUS,
    pad_fraction: float = PAD_FRACTION,
) -> ViewTransform:
    """Crop window: tight bounding box of all detected peaks across the 8
    channels, padded by ``pad_fraction`` (total), clipped to the image.
    Falls back to the full image when nothing is detected."""
    peaks = []
    for c in range(NUM_CHANNELS):
        peaks += [(u, v) for u, v, _ in local_maxima(stack.values[c], floor, nms_radius)]
    if peaks:
        arr = np.array(peaks, dtype=np.float64)
        x0, y0 = arr.min(axis=0)
        x1, y1 = arr.max(axis=0)
    else:
        x0, y0, x1, y1 = 0.0, 0.0, stack.width - 1.0, stack.height - 1.0

    def pad(lo, hi, limit):
        span = max(hi - lo, MIN_CROP_SPAN)
        margin = span * pad_fraction / 2.0
        center = (lo + hi) / 2.0
        lo = max(center - span / 2.0 - margin, 0.0)
        hi = min(center + span / 2.0 + margin, limit)
        return lo, hi

    x0, x1 = pad(x0, x1, stack.width - 1.0)
    y0, y1 = pad(y0, y1, stack.height - 1.0)
    out_w, out_h = out_size
    return ViewTransform(
        x0=x0, y0=y0, sx=(out_w - 1.0) / (x1 - x0), sy=(out_h - 1.0) / (y1 - y0)
    )


def _bilinear(chan: np.ndarray, u: np.ndarray, v: np.ndarray, fill: float = 0.0) -> np.ndarray:
    h, w = chan.shape
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.floor(uc).astype(int)
    v0 = np.floor(vc).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uc - u0
    fv = vc - v0
    val = (
        chan[v0, u0] * (1 - fu) * (1 - fv)
        + chan[v0, u1] * fu * (1 - fv)
        + chan[v1, u0] * (1 - fu) * fv
        + chan[v1, u1] * fu * fv
    )
    return np.where(inside, val, fill)


def resample_to_network(stack: HeatmapStack, transform: ViewTransform,
                        out_size: tuple[int, int]) -> HeatmapStack:
    """Sample the crop window onto the network grid and re-normalize each
    channel to max 1."""
    out_w, out_h = out_size
    gu, gv = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    src = transform.invert(np.column_stack([gu.ravel(), gv.ravel()]))
    su = src[:, 0]
    sv = src[:, 1]
    out = np.empty((NUM_CHANNELS, out_h, out_w), dtype=np.float64)
    for c in range(NUM_CHANNELS):
        out[c] = _bilinear(stack.values[c].astype(np.float64), su, sv).reshape(out_h, out_w)
    return HeatmapStack(normalize_stack(out))


def resample_to_image(filtered: HeatmapStack, transform: ViewTransform,
                      image_size: tuple[int, int]) -> HeatmapStack:
    """Map a network-resolution filtered stack back onto the image grid
    (zero outside the crop window)."""
    img_w, img_h = image_size
    gu, gv = np.meshgrid(np.arange(img_w, dtype=np.float64),
                         np.arange(img_h, dtype=np.float64))
    net = transform.apply(np.column_stack([gu.ravel(), gv.ravel()]))
    out = np.empty((NUM_CHANNELS, img_h, img_w), dtype=np.float64)
    for c in range(NUM_CHANNELS):
        out[c] = _bilinear(filtered.values[c].astype(np.float64),
                           net[:, 0], net[:, 1]).reshape(img_h, img_w)
    return HeatmapStack(np.clip(out, 0.0, 1.0).astype(np.float32))


def scene_training_pair(
    merged: HeatmapStack,
    gt_projections: np.ndarray,
    config: PgmConfig,
    sigma: float = DEFAULT_GT_SIGMA,
) -> tuple[HeatmapStack, HeatmapStack]:
    """Crop-resample a full-resolution scene into a (merged, gt) training
    pair at the network resolution.  The ground-truth stack places a
    Gaussian at each transformed true projection."""
    w, h = config.resolution
    tr = fit_view_transform(merged, config.resolution)
    net_in = resample_to_network(merged, tr, config.resolution)
    q = tr.apply(gt_projections)
    q = np.clip(q, 0.0, [w - 1.0, h - 1.0])
    gt = np.stack([synth_gaussian_channel(q[c], sigma, w, h) for c in range(NUM_CHANNELS)])
    return net_in, HeatmapStack(gt)


def group_scene(model: PgmModel, merged: HeatmapStack):
    """Run grouping on a full-resolution stack.

    Returns (selections in image pixels (8,2) float, filtered stack at
    network resolution, the transform used).
    """
    tr = fit_view_transform(merged, model.config.resolution)
    net_in = resample_to_network(merged, tr, model.config.resolution)
    filtered = pgm_forward(model, net_in)
    sels, _ = select_projections(filtered)
    img = tr.invert(np.array(sels, dtype=np.float64))
    return img, filtered, tr


# ---------------------------------------------------------------------------
# persistence


def save_pgm(path, model: PgmModel) -> None:
    from .formats import save_net_params

    save_net_params(path, "pgm", model.config.to_config_dict(), model.to_tensors())


def load_pgm(path) -> PgmModel:
    from .formats import load_net_params

    _, cfg, tensors = load_net_params(path, expected_kind="pgm")
    return PgmModel.from_tensors(PgmConfig.from_config_dict(cfg), tensors)
