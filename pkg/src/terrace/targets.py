"""Training targets from instance maps: footprint union and touching borders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .raster_io import RasterContainer, validate_instances

DEFAULT_TOUCH_DISTANCE = 2


@dataclass
class TargetPair:
    footprint: np.ndarray  # bool H x W
    touch: np.ndarray  # bool H x W
    touch_distance: int = DEFAULT_TOUCH_DISTANCE

    def stack(self) -> np.ndarray:
        return np.stack([self.footprint, self.touch]).astype(np.float32)

    def to_raster(self) -> RasterContainer:
        return RasterContainer(self.stack(), "targets")


def make_targets(labels: np.ndarray, d: int = DEFAULT_TOUCH_DISTANCE) -> TargetPair:
    """Touch marks pixels within Chebyshev distance ``d`` of two or more instances.

    That includes background pixels in narrow gaps, so subtracting the
    touch channel from the footprint severs near-adjacent buildings.
    """
    if d < 1:
        raise ContractError(f"touch distance must be >= 1, got {d}")
    labels = validate_instances(labels)
    h, w = labels.shape
    footprint = labels > 0
    coverage = np.zeros((h, w), dtype=np.int32)
    struct = np.ones((2 * d + 1, 2 * d + 1), dtype=bool)
    objects = ndimage.find_objects(labels)
    for k, sl in enumerate(objects, start=1):
        if sl is None:
            continue
        y0 = max(sl[0].start - d, 0)
        y1 = min(sl[0].stop + d, h)
        x0 = max(sl[1].start - d, 0)
        x1 = min(sl[1].stop + d, w)
        crop = labels[y0:y1, x0:x1] == k
        coverage[y0:y1, x0:x1] += ndimage.binary_dilation(crop, structure=struct)
    return TargetPair(footprint, coverage >= 2, d)
