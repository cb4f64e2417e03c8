"""Adam training loop with the two-stage freeze schedule.

For the first ``freeze_epochs`` epochs only decoder and head parameters
move; afterwards everything trains end to end.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import network
from . import tensor as T
from .augment import AugmentConfig, augment_pair
from .errors import ContractError, ShapeError
from .loss import LossConfig, combined_loss
from .network import ModelWeights, set_freeze
from .preprocess import NormalizationStats, minmax, standardize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 30
    batch_size: int = 4
    freeze_epochs: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = True
    checkpoint_every: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.freeze_epochs < 0:
            raise ContractError("freeze_epochs must be >= 0")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(w: ModelWeights, grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """Bias-corrected Adam update of the unfrozen parameters, in place."""
    for name in w.params:
        if not w.frozen.get(name) and grads.get(name) is None:
            raise ContractError(f"no gradient for trainable parameter {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in w.params.items():
        if w.frozen.get(name):
            continue
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        w.params[name] = (p - update).astype(p.dtype)
    return w, state


@dataclass
class Scene:
    name: str
    image: np.ndarray  # raw C x H x W
    targets: np.ndarray  # 2 x H x W binary
    labels: np.ndarray | None = None


def prepare_image(raw: np.ndarray) -> np.ndarray:
    """Per-image min-max followed by mean/std standardization."""
    stats = NormalizationStats.from_image(raw)
    return standardize(minmax(raw.astype(np.float64), stats), stats)


def _sample(scene: Scene, aug: AugmentConfig | None, sample_seed: int):
    stats = NormalizationStats.from_image(scene.image)
    img = minmax(scene.image.astype(np.float64), stats)
    tgt = scene.targets
    if aug is not None:
        img, tgt = augment_pair(img, tgt, aug, sample_seed)
    return standardize(img, stats), tgt.astype(np.float32)


def check_dataset(dataset: list[Scene], in_channels: int) -> None:
    if not dataset:
        raise ContractError("dataset is empty")
    for s in dataset:
        c, h, w = s.image.shape
        if c != in_channels:
            raise ShapeError(f"{s.name}: image has {c} channels, network expects {in_channels}")
        if s.targets.shape != (2, h, w):
            raise ShapeError(f"{s.name}: targets {s.targets.shape} do not match image {s.image.shape}")
        if h % network.GRID or w % network.GRID:
            raise ShapeError(f"{s.name}: training tiles must be divisible by {network.GRID}, got {h}x{w}")


def train_step(w: ModelWeights, x: np.ndarray, y: np.ndarray, loss_cfg: LossConfig, state: AdamState, lr: float):
    params = {k: T.Tensor(v, requires_grad=not w.frozen.get(k), name=k) for k, v in w.params.items()}
    with T.Tape() as tape:
        logits = network.forward(w, T.Tensor(x), params)
        breakdown = combined_loss(y, logits, loss_cfg)
    tape.backward(breakdown.L)
    grads = {k: t.grad for k, t in params.items() if not w.frozen.get(k)}
    adam_step(w, grads, state, lr)
    return breakdown, logits.values


def train(
    cfg: TrainConfig,
    dataset: list[Scene],
    weights: ModelWeights,
    loss_cfg: LossConfig | None = None,
    aug_cfg: AugmentConfig | None = None,
    log_path: str | None = None,
    checkpoint_dir: str | None = None,
    state: AdamState | None = None,
) -> tuple[ModelWeights, list[dict]]:
    """Train ``weights`` (modified in place) and return them with the epoch log."""
    loss_cfg = loss_cfg or LossConfig()
    check_dataset(dataset, weights.config.in_channels)
    if cfg.augment:
        aug_cfg = aug_cfg or AugmentConfig(crop_size=None, rng_seed=cfg.rng_seed)
    else:
        aug_cfg = None
    state = state or AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            stage = "frozen-encoder" if epoch <= cfg.freeze_epochs else "end-to-end"
            w = set_freeze(weights, "encoder" if stage == "frozen-encoder" else "none")
            order = np.random.default_rng([cfg.rng_seed, epoch]).permutation(len(dataset))
            sums = {"L": 0.0, "H": 0.0, "J": 0.0}
            per_h = np.zeros(2)
            per_j = np.zeros(2)
            inter = union = 0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                xs, ys = zip(*(_sample(dataset[i], aug_cfg, epoch * len(dataset) + int(i)) for i in idx))
                x = np.stack(xs).astype(np.float32)
                y = np.stack(ys)
                br, logits = train_step(w, x, y, loss_cfg, state, cfg.learning_rate)
                for key in sums:
                    sums[key] += float(getattr(br, key).values)
                per_h += br.per_channel_H
                per_j += br.per_channel_J
                pred = logits[:, 0] > 0
                gt = y[:, 0] > 0.5
                inter += int(np.count_nonzero(pred & gt))
                union += int(np.count_nonzero(pred | gt))
                n_batches += 1
            weights.params = w.params
            record = {
                "epoch": epoch,
                "L": sums["L"] / n_batches,
                "H": sums["H"] / n_batches,
                "J": sums["J"] / n_batches,
                "H_per_channel": (per_h / n_batches).tolist(),
                "J_per_channel": (per_j / n_batches).tolist(),
                "pixel_iou": inter / union if union else 1.0,
                "stage": stage,
            }
            history.append(record)
            log.info(
                "epoch %d %s L=%.4f H=%.4f J=%.4f (%.3f/%.3f) iou=%.4f",
                epoch, stage, record["L"], record["H"], record["J"], *record["J_per_channel"], record["pixel_iou"],
            )
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if checkpoint_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                network.save_checkpoint(weights, os.path.join(checkpoint_dir, f"epoch_{epoch:04d}"))
    finally:
        if log_fh:
            log_fh.close()
    weights.frozen = {k: False for k in weights.params}
    return weights, history
