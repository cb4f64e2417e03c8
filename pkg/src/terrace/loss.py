"""Binary cross entropy plus soft Jaccard, combined as
``L = alpha * H + (1 - alpha) * (1 - J)``.

Two soft Jaccard forms are available. ``literal`` averages the per-pixel
ratio ``y p / (y + p - y p)`` over pixels; it is identically zero where
``y == 0`` and so gives no gradient on negatives. ``aggregate`` takes the
ratio of summed intersection to summed union per channel and is the
default for training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError

VARIANTS = ("aggregate", "literal")


@dataclass
class LossConfig:
    alpha: float = 0.7
    class_weights: tuple[float, float] = (1.0, 1.0)
    jaccard_variant: str = "aggregate"
    epsilon: float = 1e-15

    def __post_init__(self):
        self.class_weights = tuple(float(v) for v in self.class_weights)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if len(self.class_weights) != 2 or min(self.class_weights) < 0 or sum(self.class_weights) == 0:
            raise ConfigError(f"need two non-negative class weights, got {self.class_weights}")
        if self.jaccard_variant not in VARIANTS:
            raise ConfigError(f"jaccard_variant must be one of {VARIANTS}")


@dataclass
class LossBreakdown:
    L: T.Tensor
    H: T.Tensor
    J: T.Tensor
    per_channel_H: list[float] = field(default_factory=list)
    per_channel_J: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "L": float(self.L.values),
            "H": float(self.H.values),
            "J": float(self.J.values),
            "per_channel_H": list(self.per_channel_H),
            "per_channel_J": list(self.per_channel_J),
        }


def _check(y, p: T.Tensor) -> np.ndarray:
    y = np.asarray(y.values if isinstance(y, T.Tensor) else y)
    if y.shape != p.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {p.shape}")
    if p.values.ndim != 4:
        raise ShapeError(f"expected N x C x H x W, got {p.shape}")
    return y.astype(p.dtype)


def _channel(t: T.Tensor, c: int) -> T.Tensor:
    return T.slice_channels(t, c, c + 1)


def soft_jaccard(y, p: T.Tensor, cfg: LossConfig | None = None) -> tuple[list[T.Tensor], T.Tensor]:
    """Per-channel soft Jaccard and their weighted mean (in [0, 1])."""
    cfg = cfg or LossConfig()
    y = _check(y, p)
    if p.values.min() < 0 or p.values.max() > 1:
        raise ContractError("probabilities must lie in [0, 1]")
    eps = cfg.epsilon
    per_channel = []
    for c in range(p.shape[1]):
        pc = _channel(p, c)
        yc = y[:, c : c + 1]
        inter = T.mul(pc, yc)
        if cfg.jaccard_variant == "literal":
            union = T.sub(T.add(pc, yc), inter)
            jc = T.mean(T.div(inter, T.add(union, eps)))
        else:
            s_inter = T.sum_(inter)
            s_union = T.sub(T.add(T.sum_(pc), float(yc.sum())), s_inter)
            jc = T.div(T.add(s_inter, eps), T.add(s_union, eps))
        per_channel.append(jc)
    w = cfg.class_weights
    total = None
    for wc, jc in zip(w, per_channel):
        term = T.mul(jc, wc)
        total = term if total is None else T.add(total, term)
    return per_channel, T.mul(total, 1.0 / sum(w))


def bce(y, logits: T.Tensor) -> tuple[list[T.Tensor], T.Tensor]:
    """Per-channel mean BCE on logits, and the mean over channels.

    Uses ``softplus(z) - y z`` which equals ``-[y log s + (1-y) log(1-s)]``.
    """
    y = _check(y, logits)
    per_channel = []
    for c in range(logits.shape[1]):
        zc = _channel(logits, c)
        per_channel.append(T.mean(T.sub(T.softplus(zc), T.mul(zc, y[:, c : c + 1]))))
    total = per_channel[0]
    for h in per_channel[1:]:
        total = T.add(total, h)
    return per_channel, T.mul(total, 1.0 / len(per_channel))


def combined_loss(y, logits: T.Tensor, cfg: LossConfig | None = None) -> LossBreakdown:
    cfg = cfg or LossConfig()
    hs, h = bce(y, logits)
    js, j = soft_jaccard(y, T.sigmoid(logits), cfg)
    a = cfg.alpha
    total = T.add(T.mul(h, a), T.mul(1.0 - j, 1.0 - a))
    return LossBreakdown(
        L=total,
        H=h,
        J=j,
        per_channel_H=[float(v.values) for v in hs],
        per_channel_J=[float(v.values) for v in js],
    )
