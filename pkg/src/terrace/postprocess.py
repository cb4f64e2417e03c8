"""From footprint and border probabilities to an instance map.

threshold -> seeds (mask minus border) -> connected components ->
marker-driven watershed over the thresholded mask -> area filter.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ContractError, ShapeError
from .raster_io import compact_labels

PRIORITIES = ("probability", "distance")
_OFFSETS4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
_OFFSETS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass
class PostprocessConfig:
    mask_threshold: float = 0.5
    border_threshold: float = 0.5
    connectivity: int = 4
    min_instance_area: int = 0
    priority: str = "probability"

    def __post_init__(self):
        for name in ("mask_threshold", "border_threshold"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.min_instance_area < 0:
            raise ConfigError("min_instance_area must be >= 0")
        if self.priority not in PRIORITIES:
            raise ConfigError(f"priority must be one of {PRIORITIES}")


def make_seeds(mask_prob: np.ndarray, border_prob: np.ndarray, cfg: PostprocessConfig | None = None) -> np.ndarray:
    cfg = cfg or PostprocessConfig()
    mask_prob = np.asarray(mask_prob)
    border_prob = np.asarray(border_prob)
    if mask_prob.shape != border_prob.shape:
        raise ShapeError(f"mask {mask_prob.shape} and border {border_prob.shape} differ")
    return (mask_prob >= cfg.mask_threshold) & ~(border_prob >= cfg.border_threshold)


def label_components(seeds: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """Connected components numbered 1..K in row-major first-encounter order."""
    if connectivity not in (4, 8):
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, _ = ndimage.label(np.asarray(seeds, dtype=bool), structure=structure)
    return compact_labels(labels)


def watershed(
    markers: np.ndarray,
    region: np.ndarray,
    priority: np.ndarray,
    connectivity: int = 4,
) -> np.ndarray:
    """Priority-flood from markers over ``region``.

    Pixels are dequeued by descending priority, FIFO among ties (by enqueue
    sequence). A pixel takes the label of the neighbour that first enqueues
    it. Marker pixels keep their label; region pixels no marker reaches
    stay 0.
    """
    markers = np.asarray(markers)
    region = np.asarray(region, dtype=bool)
    priority = np.asarray(priority, dtype=np.float64)
    if not (markers.shape == region.shape == priority.shape) or markers.ndim != 2:
        raise ShapeError(f"markers {markers.shape}, region {region.shape}, priority {priority.shape} must match")
    if np.any((markers > 0) & ~region):
        raise ContractError("markers must lie inside the region")
    offsets = _OFFSETS4 if connectivity == 4 else _OFFSETS8
    h, w = markers.shape
    out = np.where(region, markers, 0).astype(np.int32)
    prio = priority.tolist()
    lab = out.tolist()
    inside = region.tolist()
    heap = []
    seq = 0
    for y, x in zip(*np.nonzero(out)):
        y, x = int(y), int(x)
        heap.append((-prio[y][x], seq, y, x))
        seq += 1
    heapq.heapify(heap)
    while heap:
        _, _, y, x = heapq.heappop(heap)
        k = lab[y][x]
        for dy, dx in offsets:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and inside[ny][nx] and lab[ny][nx] == 0:
                lab[ny][nx] = k
                heapq.heappush(heap, (-prio[ny][nx], seq, ny, nx))
                seq += 1
    return np.asarray(lab, dtype=np.int32)


def unreached(labels: np.ndarray, region: np.ndarray) -> int:
    """Region pixels the flood never reached."""
    return int(np.count_nonzero(np.asarray(region, dtype=bool) & (labels == 0)))


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def instances_from_probabilities(mask_prob, border_prob, cfg: PostprocessConfig | None = None) -> np.ndarray:
    cfg = cfg or PostprocessConfig()
    mask_prob = np.asarray(mask_prob, dtype=np.float64)
    region = mask_prob >= cfg.mask_threshold
    seeds = make_seeds(mask_prob, border_prob, cfg)
    markers = label_components(seeds, cfg.connectivity)
    if cfg.priority == "distance":
        surface = ndimage.distance_transform_edt(region)
    else:
        surface = mask_prob
    labels = watershed(markers, region, surface, cfg.connectivity)
    if cfg.min_instance_area > 0:
        areas = np.bincount(labels.ravel())
        small = np.nonzero(areas < cfg.min_instance_area)[0]
        labels[np.isin(labels, small[small > 0])] = 0
    return compact_labels(labels)


def extract_instances(pred_logits, cfg: PostprocessConfig | None = None) -> np.ndarray:
    """2 x H x W logits (already cropped back) -> instance map."""
    z = np.asarray(getattr(pred_logits, "values", pred_logits))
    if z.ndim == 4 and z.shape[0] == 1:
        z = z[0]
    if z.ndim != 3 or z.shape[0] != 2:
        raise ShapeError(f"expected 2 x H x W logits, got {z.shape}")
    p = _sigmoid(z)
    return instances_from_probabilities(p[0], p[1], cfg)


def components_only(mask_prob, cfg: PostprocessConfig | None = None) -> np.ndarray:
    """Ablation: threshold the footprint and label components, ignoring borders."""
    cfg = cfg or PostprocessConfig()
    return label_components(np.asarray(mask_prob) >= cfg.mask_threshold, cfg.connectivity)
