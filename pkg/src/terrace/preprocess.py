"""Per-channel normalization and grid padding for inference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .raster_io import RasterContainer
from .tensor import Tensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
N_MULTISPECTRAL = 8


def channel_mean(channels: int) -> tuple[float, ...]:
    return IMAGENET_MEAN + (0.0,) * (channels - 3)


def channel_std(channels: int) -> tuple[float, ...]:
    return IMAGENET_STD + (1.0,) * (channels - 3)


@dataclass
class NormalizationStats:
    x_min: np.ndarray
    x_max: np.ndarray
    mean: tuple[float, ...] = field(default_factory=lambda: channel_mean(11))
    std: tuple[float, ...] = field(default_factory=lambda: channel_std(11))

    def __post_init__(self):
        self.x_min = np.asarray(self.x_min, dtype=np.float64)
        self.x_max = np.asarray(self.x_max, dtype=np.float64)
        n = len(self.x_min)
        if not (len(self.x_max) == len(self.mean) == len(self.std) == n):
            raise ContractError("normalization vectors must all have one entry per channel")
        if np.any(self.x_max < self.x_min):
            raise ContractError("x_max must be >= x_min per channel")
        if min(self.std) <= 0:
            raise ContractError("std entries must be positive")

    @property
    def channels(self) -> int:
        return len(self.x_min)

    @classmethod
    def from_image(cls, data: np.ndarray) -> "NormalizationStats":
        """Per-image extrema with the standard mean/std for that channel count."""
        c = data.shape[0]
        if c not in (3, 3 + N_MULTISPECTRAL):
            raise ContractError(f"expected 3 or {3 + N_MULTISPECTRAL} channels, got {c}")
        flat = data.reshape(c, -1)
        return cls(flat.min(axis=1), flat.max(axis=1), channel_mean(c), channel_std(c))


def minmax(data: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """(x - min) / (max - min) per channel; constant channels become zero."""
    if data.shape[0] != stats.channels:
        raise ContractError(f"image has {data.shape[0]} channels, stats describe {stats.channels}")
    lo = stats.x_min[:, None, None]
    span = (stats.x_max - stats.x_min)[:, None, None]
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (data - lo) / safe, 0.0)
    return out.astype(np.float32)


def standardize(data: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    return ((data - mean) / std).astype(np.float32)


def normalize(img: RasterContainer, stats: NormalizationStats | None = None) -> RasterContainer:
    if img.semantic.endswith("normalized"):
        raise ContractError("image is already normalized")
    stats = stats or NormalizationStats.from_image(img.data)
    data = img.data.astype(np.float64)
    return RasterContainer(standardize(minmax(data, stats), stats), "normalized")


@dataclass(frozen=True)
class PadRecord:
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0
    height: int = 0  # original spatial size
    width: int = 0

    @property
    def is_zero(self) -> bool:
        return not (self.top or self.bottom or self.left or self.right)


def _split(n: int, multiple: int) -> tuple[int, int]:
    total = -n % multiple
    return total // 2, total - total // 2


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    # mirror without repeating the edge sample: -1 -> 1, n -> n - 2;
    # folds repeatedly so pads larger than the image are fine
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def reflect_pad(data: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Reflection padding of the last two axes; works for pads wider than the image."""
    h, w = data.shape[-2:]
    rows = _reflect_index(np.arange(-top, h + bottom), h)
    cols = _reflect_index(np.arange(-left, w + right), w)
    return data[..., rows[:, None], cols[None, :]]


def pad_to_grid(data: np.ndarray, multiple: int = 32) -> tuple[np.ndarray, PadRecord]:
    """Reflect-pad the last two axes up to a multiple; extra pixel goes bottom/right."""
    h, w = data.shape[-2:]
    top, bottom = _split(h, multiple)
    left, right = _split(w, multiple)
    rec = PadRecord(top, bottom, left, right, h, w)
    if rec.is_zero:
        return data, rec
    return reflect_pad(data, top, bottom, left, right), rec


def crop_back(pred, rec: PadRecord):
    if isinstance(pred, Tensor):
        return Tensor(crop_back(pred.values, rec))
    if rec == PadRecord():
        return pred
    h, w = pred.shape[-2:]
    if h != rec.height + rec.top + rec.bottom or w != rec.width + rec.left + rec.right:
        raise ContractError(
            f"pad record expects {rec.height + rec.top + rec.bottom}x{rec.width + rec.left + rec.right}, got {h}x{w}"
        )
    return pred[..., rec.top : rec.top + rec.height, rec.left : rec.left + rec.width]
