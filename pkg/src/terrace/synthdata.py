"""Synthetic 11-channel "city" tiles with building instance ground truth.

Buildings are rectangles (some rotated). A fraction of them come in
near-touching pairs with a 0-2 px gap, which is the case the border
channel exists for. Channels 0-2 are RGB; 3-10 stand in for the
multispectral bands and are functions of the geometry plus noise, with
channel 3 carrying a strong building-interior signal.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, PlacementError
from .raster_io import RasterContainer, write_instances, write_raster
from .targets import DEFAULT_TOUCH_DISTANCE, make_targets

N_CHANNELS = 11
MAX_TRIES = 200


@dataclass
class SceneConfig:
    size: int = 96
    buildings_per_scene: tuple[int, int] = (4, 8)
    touching_pair_fraction: float = 0.5
    pair_gaps: tuple[int, ...] = (0, 1, 2)
    side_range: tuple[int, int] = (7, 18)
    rotated_fraction: float = 0.3
    min_separation: int = 2 * DEFAULT_TOUCH_DISTANCE + 1
    intensity_margin: float = 0.15
    noise_sigma: float = 0.03
    rng_seed: int = 0

    def __post_init__(self):
        self.buildings_per_scene = tuple(int(v) for v in self.buildings_per_scene)
        self.side_range = tuple(int(v) for v in self.side_range)
        self.pair_gaps = tuple(int(v) for v in self.pair_gaps)
        lo, hi = self.buildings_per_scene
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad buildings_per_scene {self.buildings_per_scene}")
        if not 0 <= self.touching_pair_fraction <= 1:
            raise ConfigError("touching_pair_fraction must lie in [0, 1]")
        if self.size < 8:
            raise ConfigError("scene size too small")
        if not (2 <= self.side_range[0] <= self.side_range[1] < self.size):
            raise ConfigError(f"bad side_range {self.side_range}")
        if not self.pair_gaps or min(self.pair_gaps) < 0 or max(self.pair_gaps) > DEFAULT_TOUCH_DISTANCE:
            raise ConfigError(f"pair gaps must lie in [0, {DEFAULT_TOUCH_DISTANCE}]")


def touching_pair_count(cfg: SceneConfig, n_buildings: int) -> int:
    return math.ceil(cfg.touching_pair_fraction * (n_buildings // 2))


def _rect_mask(size, y0, x0, hh, ww):
    m = np.zeros((size, size), dtype=bool)
    m[y0 : y0 + hh, x0 : x0 + ww] = True
    return m


def _rotated_mask(size, cy, cx, hh, ww, angle):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c, s = math.cos(angle), math.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= ww / 2) & (np.abs(v) <= hh / 2)


def _fits(mask, occupied, sep):
    if not mask.any():
        return False
    if sep > 0:
        grown = ndimage.binary_dilation(mask, structure=np.ones((2 * sep + 1, 2 * sep + 1), dtype=bool))
    else:
        grown = mask
    return not (grown & occupied).any()


def _place_single(rng, cfg, occupied):
    size = cfg.size
    lo, hi = cfg.side_range
    for _ in range(MAX_TRIES):
        hh, ww = rng.integers(lo, hi + 1, size=2)
        if rng.random() < cfg.rotated_fraction:
            angle = rng.uniform(0, math.pi)
            r = math.hypot(hh, ww) / 2 + 1
            if 2 * r >= size:
                continue
            cy, cx = rng.uniform(r, size - r, size=2)
            mask = _rotated_mask(size, cy, cx, hh, ww, angle)
        else:
            y0 = int(rng.integers(1, size - hh))
            x0 = int(rng.integers(1, size - ww))
            mask = _rect_mask(size, y0, x0, hh, ww)
        if _fits(mask, occupied, cfg.min_separation):
            return mask
    return None


def _place_pair(rng, cfg, occupied):
    """Two axis-aligned rectangles facing each other across a small gap."""
    size = cfg.size
    lo, hi = cfg.side_range
    for _ in range(MAX_TRIES):
        gap = int(rng.choice(cfg.pair_gaps))
        h1, w1, h2, w2 = (int(v) for v in rng.integers(lo, hi + 1, size=4))
        horizontal = rng.random() < 0.5
        if not horizontal:
            h1, w1, h2, w2 = w1, h1, w2, h2
        if horizontal:
            total_w, total_h = w1 + gap + w2, max(h1, h2)
        else:
            total_w, total_h = max(w1, w2), h1 + gap + h2
        if total_w + 2 >= size or total_h + 2 >= size:
            continue
        y0 = int(rng.integers(1, size - total_h))
        x0 = int(rng.integers(1, size - total_w))
        if horizontal:
            # second rectangle shares at least 3 rows with the first
            overlap = min(h1, h2)
            off = int(rng.integers(-(h2 - min(3, overlap)), h1 - min(3, overlap) + 1))
            ya, yb = y0, min(max(y0 + off, 1), size - 1 - h2)
            a = _rect_mask(size, ya, x0, h1, w1)
            b = _rect_mask(size, yb, x0 + w1 + gap, h2, w2)
        else:
            overlap = min(w1, w2)
            off = int(rng.integers(-(w2 - min(3, overlap)), w1 - min(3, overlap) + 1))
            xa, xb = x0, min(max(x0 + off, 1), size - 1 - w2)
            a = _rect_mask(size, y0, xa, h1, w1)
            b = _rect_mask(size, y0 + h1 + gap, xb, h2, w2)
        if a.sum() != h1 * w1 or b.sum() != h2 * w2:
            continue
        if not _chebyshev_gap(a, b) <= DEFAULT_TOUCH_DISTANCE:
            continue
        both = a | b
        if _fits(both, occupied, cfg.min_separation):
            return a, b
    return None


def _chebyshev_gap(a, b) -> int:
    """Pixels of empty space between two masks along the Chebyshev metric."""
    ya, xa = np.nonzero(a)
    yb, xb = np.nonzero(b)
    d = np.maximum(np.abs(ya[:, None] - yb[None, :]), np.abs(xa[:, None] - xb[None, :]))
    return int(d.min()) - 1


def _place_buildings(rng, cfg) -> list[np.ndarray]:
    n = int(rng.integers(cfg.buildings_per_scene[0], cfg.buildings_per_scene[1] + 1))
    n_pairs = min(touching_pair_count(cfg, n), n // 2)
    occupied = np.zeros((cfg.size, cfg.size), dtype=bool)
    masks = []
    for _ in range(n_pairs):
        pair = _place_pair(rng, cfg, occupied)
        if pair is None:
            raise PlacementError(f"could not place a touching pair after {MAX_TRIES} tries")
        masks.extend(pair)
        occupied |= pair[0] | pair[1]
    for _ in range(n - 2 * n_pairs):
        m = _place_single(rng, cfg, occupied)
        if m is None:
            raise PlacementError(f"could not place building {len(masks) + 1} of {n} after {MAX_TRIES} tries")
        masks.append(m)
        occupied |= m
    return masks


def _smooth_field(rng, size, scale=16.0):
    f = rng.standard_normal((size, size))
    f = ndimage.gaussian_filter(f, scale, mode="wrap")
    return f / (np.abs(f).max() + 1e-12)


def _block_average(x, k=4):
    """Low-resolution band: average over k x k blocks, then nearest upsample."""
    size = x.shape[0]
    pad = -size % k
    xp = np.pad(x, ((0, pad), (0, pad)), mode="edge")
    n = xp.shape[0] // k
    low = xp.reshape(n, k, n, k).mean(axis=(1, 3))
    return np.repeat(np.repeat(low, k, axis=0), k, axis=1)[:size, :size]


def render(labels: np.ndarray, rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    size = labels.shape[0]
    inside = labels > 0
    n = int(labels.max(initial=0))
    # RGB: smooth ground + per-building roof colour offset by at least the margin
    ground = np.array([0.45, 0.42, 0.35]) + 0.05 * rng.standard_normal(3)
    texture = _smooth_field(rng, size)
    img = np.empty((N_CHANNELS, size, size))
    for c in range(3):
        img[c] = ground[c] + 0.08 * texture
    for k in range(1, n + 1):
        sel = labels == k
        sign = 1.0 if rng.random() < 0.5 else -1.0
        shade = sign * rng.uniform(cfg.intensity_margin, cfg.intensity_margin + 0.2)
        tint = 0.03 * rng.standard_normal(3)
        for c in range(3):
            img[c][sel] = ground[c] + shade + tint[c]
    # multispectral stand-ins
    padded = np.pad(labels, 1)
    edge = np.zeros((size, size), dtype=bool)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        edge |= inside & (padded[1 + dy : 1 + dy + size, 1 + dx : 1 + dx + size] != labels)
    dist = ndimage.distance_transform_cdt(np.pad(inside & ~edge, 1), metric="chessboard")[1:-1, 1:-1]
    img[3] = np.where(inside, 0.8, 0.2)
    img[4] = np.where(edge, 0.9, np.where(inside, 0.4, 0.1))
    img[5] = np.minimum(dist, 6) / 6.0
    img[6] = _block_average(inside.astype(float))
    veg = _smooth_field(rng, size, 8.0)
    img[7] = np.where(inside, 0.2, 0.5 + 0.3 * veg)
    img[8] = 0.5 + 0.3 * texture
    img[9] = _block_average(img[0])
    img[10] = 0.5 + 0.25 * _smooth_field(rng, size, 24.0)
    img += cfg.noise_sigma * rng.standard_normal(img.shape)
    return img.astype(np.float32)


def generate_scene(cfg: SceneConfig, scene_seed: int) -> tuple[RasterContainer, np.ndarray]:
    rng = np.random.default_rng([cfg.rng_seed, scene_seed])
    masks = _place_buildings(rng, cfg)
    labels = np.zeros((cfg.size, cfg.size), dtype=np.int32)
    for k, m in enumerate(masks, start=1):
        labels[m] = k  # later buildings occlude earlier ones
    image = render(labels, rng, cfg)
    return RasterContainer(image, "image"), labels


def scene_name(index: int) -> str:
    return f"scene_{index:04d}"


def generate_dataset(cfg: SceneConfig, n_scenes: int, out_dir: str, first_seed: int = 0) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n_scenes):
        seed = first_seed + i
        name = scene_name(seed)
        image, labels = generate_scene(cfg, seed)
        targets = make_targets(labels)
        files = {
            "image": f"{name}.image.rst",
            "targets": f"{name}.targets.rst",
            "labels": f"{name}.labels.rst",
        }
        write_raster(os.path.join(out_dir, files["image"]), image)
        write_raster(os.path.join(out_dir, files["targets"]), targets.to_raster())
        write_instances(os.path.join(out_dir, files["labels"]), labels)
        entries.append({"name": name, "seed": seed, "instances": int(labels.max(initial=0)), **files})
    manifest = {"scene_config": asdict(cfg), "scenes": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(data_dir: str) -> dict:
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        return json.load(fh)
