"""Minimal dense-network kernel with hand-written backward passes.

Everything runs in 64-bit floats: the two networks in this package are
tiny and the acceptance mechanism is finite-difference verification, so
precision is worth far more than speed here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateSet, NonFiniteGradient, ShapeMismatch

CONTEXT_NORM_EPS = 1e-6
GRAD_CHECK_FLOOR = 1e-8


@dataclass
class ParamTensor:
    """A trainable tensor and its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray

    @staticmethod
    def create(name: str, value: np.ndarray) -> "ParamTensor":
        v = np.asarray(value, dtype=np.float64)
        return ParamTensor(name, v, np.zeros_like(v))

    def zero_grad(self):
        self.grad[...] = 0.0


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# layers


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeMismatch(
            f"dense shapes disagree: x{x.shape} W{W.shape} b{b.shape}"
        )
    return x @ W + b


def dense_backward(x: np.ndarray, W: np.ndarray, dy: np.ndarray):
    """Returns (dx, dW, db) for y = x @ W + b."""
    dx = dy @ W.T
    dW = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dW, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0.0)


def dropout_forward(
    x: np.ndarray, rate: float, training: bool, rng: Optional[np.random.Generator]
):
    """Inverted dropout; exact identity in inference mode.

    Returns (y, mask); mask is None when nothing was dropped.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, dy: np.ndarray) -> np.ndarray:
    return dy if mask is None else dy * mask


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean over rows of -sum_i t_i log softmax(logits)_i.

    Targets must be nonnegative with rows summing to 1.  Returns
    (loss, dlogits) with dlogits = (softmax - target) / n_rows.
    """
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_s = z - log_norm
    n = logits.shape[0]
    loss = float(-(targets * log_s).sum() / n)
    dlogits = (np.exp(log_s) - targets) / n
    return loss, dlogits


def context_normalize_forward(x: np.ndarray):
    """Whiten each feature column across the N rows of one instance set.

    The row-sum is computed over sorted values so the output is exactly
    permutation-equivariant, bit for bit.
    """
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateSet("context normalization needs an (N>=2, d) set")
    n = x.shape[0]
    mean = np.sort(x, axis=0).sum(axis=0) / n
    centered = x - mean
    var = np.sort(centered**2, axis=0).sum(axis=0) / n
    inv_std = 1.0 / np.sqrt(var + CONTEXT_NORM_EPS)
    y = centered * inv_std
    return y, (y, inv_std, n)


def context_normalize_backward(cache, dy: np.ndarray) -> np.ndarray:
    y, inv_std, n = cache
    return inv_std * (dy - dy.mean(axis=0) - y * (dy * y).mean(axis=0))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adaptive-moment state; moments are keyed by parameter name."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    scratch: dict = field(default_factory=dict, repr=False)  # not persisted


def adam_step(params: Sequence[ParamTensor], state: OptimizerState) -> None:
    """One bias-corrected adaptive-moment update, in place.

    Aborts (raising NonFiniteGradient) before touching any parameter if
    any gradient is non-finite; finite gradients and moments guarantee a
    finite update (the denominator is bounded below by epsilon).  All
    arithmetic is in-place through a per-parameter scratch buffer: the
    big grouping networks make allocation the dominant cost otherwise.
    """
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in {p.name}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in params:
        m = state.first_moment.setdefault(p.name, np.zeros_like(p.value))
        v = state.second_moment.setdefault(p.name, np.zeros_like(p.value))
        buf = state.scratch.get(p.name)
        if buf is None or buf.shape != p.value.shape:
            buf = state.scratch[p.name] = np.empty_like(p.value)
        np.multiply(m, state.beta1, out=m)
        np.multiply(p.grad, 1.0 - state.beta1, out=buf)
        m += buf
        np.multiply(v, state.beta2, out=v)
        np.multiply(p.grad, p.grad, out=buf)
        buf *= 1.0 - state.beta2
        v += buf
        np.divide(v, c2, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.epsilon
        np.divide(m, buf, out=buf)
        buf *= state.learning_rate / c1
        p.value -= buf


# ---------------------------------------------------------------------------
# verification


def grad_check(
    loss_fn: Callable[[], tuple[float, list[np.ndarray]]],
    params: Sequence[ParamTensor],
    h: float = 1e-5,
    num_coords: int = 200,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst relative error between analytic and central-difference grads.

    ``loss_fn`` evaluates the model at the current parameter values and
    returns (loss, grads) with one gradient array per parameter, in
    order.  A random subset of at least ``num_coords`` coordinates is
    probed (all of them when the model is smaller than that).
    """
    rng = rng or np.random.default_rng(0)
    _, grads = loss_fn()
    flat_grad = np.concatenate([g.ravel() for g in grads])
    sizes = [p.value.size for p in params]
    total = int(sum(sizes))
    if total <= num_coords:
        coords = np.arange(total)
    else:
        coords = rng.choice(total, size=num_coords, replace=False)

    offsets = np.cumsum([0] + sizes)

    def poke(flat_index: int, delta: float):
        k = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        local = flat_index - offsets[k]
        params[k].value.ravel()[local] += delta

    worst = 0.0
    for ci in coords:
        ci = int(ci)
        poke(ci, +h)
        lp, _ = loss_fn()
        poke(ci, -2.0 * h)
        lm, _ = loss_fn()
        poke(ci, +h)
        numeric = (lp - lm) / (2.0 * h)
        analytic = flat_grad[ci]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_CHECK_FLOOR)
        worst = max(worst, rel)
    return worst
