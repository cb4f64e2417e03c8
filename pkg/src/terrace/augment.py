"""Joint spatial and photometric augmentation of an image and its targets.

Order: scale -> rotate (reflection outside the frame) -> crop, done as one
inverse-mapped resampling, then brightness/contrast and gamma on the image
only. Images are expected min-max normalized to [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError


@dataclass
class AugmentConfig:
    scale_range: tuple[float, float] = (0.5, 1.5)
    rotation_range_degrees: tuple[float, float] = (0.0, 360.0)
    crop_size: int | None = 384  # None: the tile's shorter side
    gamma_choices: tuple[float, ...] = (0.8, 1.2)
    brightness: float = 0.2
    contrast_range: tuple[float, float] = (0.8, 1.2)
    rng_seed: int = 0

    def __post_init__(self):
        self.scale_range = tuple(self.scale_range)
        self.rotation_range_degrees = tuple(self.rotation_range_degrees)
        self.gamma_choices = tuple(self.gamma_choices)
        self.contrast_range = tuple(self.contrast_range)
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ConfigError(f"scale range must be positive with min <= max, got {self.scale_range}")
        if self.crop_size is not None and (self.crop_size < 32 or self.crop_size % 32):
            raise ConfigError(f"crop_size must be a positive multiple of 32, got {self.crop_size}")
        if not self.gamma_choices or min(self.gamma_choices) <= 0:
            raise ConfigError("gamma choices must be positive")
        if self.brightness < 0 or not (0 < self.contrast_range[0] <= self.contrast_range[1]):
            raise ConfigError("invalid brightness/contrast bounds")


@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    angle: float = 0.0  # degrees, counter-clockwise as displayed
    center: tuple[float, float] | None = None  # source (row, col) mapped to crop centre
    brightness: float = 0.0
    contrast: float = 1.0
    gamma: float = 1.0


def sample_params(cfg: AugmentConfig, shape: tuple[int, int], sample_seed: int) -> AugmentParams:
    rng = np.random.default_rng([cfg.rng_seed, sample_seed])
    scale = float(rng.uniform(*cfg.scale_range))
    angle = float(rng.uniform(*cfg.rotation_range_degrees))
    h, w = shape
    # keep the crop inside the scaled frame when it fits; otherwise centre it
    half = (crop_size(cfg, shape) - 1) / 2 / scale
    center = []
    for n in (h, w):
        lo, hi = half, n - 1 - half
        center.append(float(rng.uniform(lo, hi)) if hi > lo else (n - 1) / 2)
    return AugmentParams(
        scale=scale,
        angle=angle,
        center=(center[0], center[1]),
        brightness=float(rng.uniform(-cfg.brightness, cfg.brightness)),
        contrast=float(rng.uniform(*cfg.contrast_range)),
        gamma=float(rng.choice(cfg.gamma_choices)),
    )


def crop_size(cfg: AugmentConfig, shape: tuple[int, int]) -> int:
    return cfg.crop_size if cfg.crop_size is not None else int(min(shape))


def _cos_sin(angle: float) -> tuple[float, float]:
    q, r = divmod(angle, 90.0)
    if r == 0:
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(q) % 4]
    rad = math.radians(angle)
    return math.cos(rad), math.sin(rad)


def source_coordinates(params: AugmentParams, shape: tuple[int, int], size: int) -> np.ndarray:
    """Source (row, col) for every crop pixel, shape (2, size, size)."""
    h, w = shape
    cy, cx = params.center if params.center is not None else ((h - 1) / 2, (w - 1) / 2)
    c, s = _cos_sin(params.angle)
    mid = (size - 1) / 2
    r, q = np.meshgrid(np.arange(size) - mid, np.arange(size) - mid, indexing="ij")
    # inverse rotation then inverse scale
    src_r = (c * r + s * q) / params.scale + cy
    src_c = (c * q - s * r) / params.scale + cx
    return np.stack([src_r, src_c])


def warp(data: np.ndarray, coords: np.ndarray, order: int) -> np.ndarray:
    return np.stack([ndimage.map_coordinates(ch, coords, order=order, mode="mirror") for ch in data])


def photometric(img: np.ndarray, params: AugmentParams) -> np.ndarray:
    out = np.clip(img * params.contrast + params.brightness, 0.0, 1.0)
    return np.power(out, params.gamma)


def augment_pair(
    img: np.ndarray,
    target: np.ndarray,
    cfg: AugmentConfig,
    sample_seed: int,
    params: AugmentParams | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (image, target) crops of ``cfg.crop_size`` squared.

    ``img`` is C x H x W in [0, 1], ``target`` is 2 x H x W binary. Passing
    ``params`` bypasses sampling.
    """
    img = np.asarray(img, dtype=np.float64)
    target = np.asarray(target)
    if img.shape[1:] != target.shape[1:]:
        raise ConfigError(f"image {img.shape} and target {target.shape} are not aligned")
    shape = img.shape[1:]
    if params is None:
        params = sample_params(cfg, shape, sample_seed)
    coords = source_coordinates(params, shape, crop_size(cfg, shape))
    out_img = photometric(warp(img, coords, order=1), params)
    out_tgt = warp(target.astype(np.float64), coords, order=0) >= 0.5
    return out_img.astype(np.float32), out_tgt.astype(np.float32)
