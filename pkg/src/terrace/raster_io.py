"""On-disk rasters, instance maps and vector output.

A raster is stored as ``<name>.rst`` (headerless float32 little-endian,
planar CHW) plus ``<name>.rst.json`` describing it. Instance maps use the
same container with one channel and semantic tag ``"instances"``; label ids
are stored as exact float32 integers.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, TruncationError

DTYPE = "f32le"
LAYOUT = "chw"
SIDECAR_SUFFIX = ".json"
INSTANCES = "instances"
MAX_EXACT_LABEL = 2**24


@dataclass
class RasterContainer:
    data: np.ndarray  # (C, H, W) float32
    semantic: str = ""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ContractError(f"raster data must be non-empty C x H x W, got shape {data.shape}")
        self.data = np.ascontiguousarray(data, dtype=np.float32)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def header(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "dtype": DTYPE,
            "layout": LAYOUT,
            "semantic": self.semantic,
        }

    def nbytes(self) -> int:
        return self.width * self.height * self.channels * 4


def sidecar_path(path: str) -> str:
    return path + SIDECAR_SUFFIX


def write_raster(path: str, r: RasterContainer) -> None:
    with open(path, "wb") as fh:
        fh.write(r.data.astype("<f4", copy=False).tobytes(order="C"))
    with open(sidecar_path(path), "w") as fh:
        json.dump(r.header(), fh, sort_keys=True)
        fh.write("\n")


def read_header(path: str) -> dict:
    side = sidecar_path(path)
    if not os.path.exists(side):
        raise FormatError(f"{side}: header sidecar missing")
    try:
        with open(side) as fh:
            header = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{side}: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{side}: header is not an object")
    for key in ("width", "height", "channels"):
        v = header.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise FormatError(f"{side}: field {key!r} must be a positive integer, got {v!r}")
    if header.get("dtype") != DTYPE or header.get("layout") != LAYOUT:
        raise FormatError(f"{side}: unsupported dtype/layout {header.get('dtype')!r}/{header.get('layout')!r}")
    if not isinstance(header.get("semantic", ""), str):
        raise FormatError(f"{side}: semantic must be a string")
    return header


def read_raster(path: str) -> RasterContainer:
    header = read_header(path)
    c, h, w = header["channels"], header["height"], header["width"]
    with open(path, "rb") as fh:
        blob = fh.read()
    expected = c * h * w * 4
    if len(blob) != expected:
        raise TruncationError(f"{path}: header implies {expected} bytes, blob holds {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4").reshape(c, h, w).astype(np.float32)
    return RasterContainer(data, header.get("semantic", ""))


# ---------------------------------------------------------------------------
# instance maps


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber positive labels to 1..K in order of first row-major occurrence."""
    labels = np.asarray(labels)
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = ids[np.argsort(first, kind="stable")]
    lut = np.zeros(int(flat.max(initial=0)) + 1, dtype=np.int32)
    lut[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    out = np.where(labels > 0, lut[np.maximum(labels, 0)], 0)
    return out.astype(np.int32)


def validate_instances(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2 or min(labels.shape) < 1:
        raise ContractError(f"instance map must be a non-empty 2-D array, got {labels.shape}")
    if labels.dtype.kind == "f":
        if not np.array_equal(labels, np.round(labels)):
            raise ContractError("instance labels must be integers")
    if labels.min() < 0:
        raise ContractError("instance labels must be non-negative")
    return labels.astype(np.int32)


def write_instances(path: str, labels: np.ndarray) -> None:
    labels = validate_instances(labels)
    if labels.max(initial=0) >= MAX_EXACT_LABEL:
        raise ContractError("too many instances for exact float32 storage")
    write_raster(path, RasterContainer(labels[None].astype(np.float32), INSTANCES))


def read_instances(path: str) -> np.ndarray:
    r = read_raster(path)
    if r.channels != 1:
        raise FormatError(f"{path}: instance map must have one channel, has {r.channels}")
    return validate_instances(r.data[0])


# ---------------------------------------------------------------------------
# polygonization


def _trace_rings(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """Closed pixel-edge rings around a binary region.

    Edges are directed so the region lies to the left when walking in
    (x right, y down) coordinates; at corners shared by two diagonal
    pixels the walk turns toward the region, which keeps diagonally
    touching pixels on separate rings (4-connectivity).
    """
    h, w = mask.shape
    m = np.zeros((h + 2, w + 2), dtype=bool)
    m[1:-1, 1:-1] = mask
    # outgoing edges from each vertex, keyed by (x, y)
    nxt: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def edge(a, b):
        nxt.setdefault(a, []).append(b)

    ys, xs = np.nonzero(mask)
    for y, x in zip(ys.tolist(), xs.tolist()):
        if not m[y, x + 1]:  # top neighbour empty: walk right-to-left along top
            edge((x + 1, y), (x, y))
        if not m[y + 2, x + 1]:  # bottom empty: left-to-right along bottom
            edge((x, y + 1), (x + 1, y + 1))
        if not m[y + 1, x]:  # left empty: top-to-bottom along left side
            edge((x, y), (x, y + 1))
        if not m[y + 1, x + 2]:  # right empty: bottom-to-top along right side
            edge((x + 1, y + 1), (x + 1, y))

    def turn_rank(d_in, d_out):
        # prefer the turn toward the region, then straight, then away;
        # in a y-down frame a turn toward the region has negative cross
        cross = d_in[0] * d_out[1] - d_in[1] * d_out[0]
        dot = d_in[0] * d_out[0] + d_in[1] * d_out[1]
        if cross < 0:
            return 0
        if dot > 0:
            return 1
        return 2

    rings = []
    for start in sorted(nxt):
        while nxt.get(start):
            ring = [start]
            cur = start
            prev_dir = None
            while True:
                outs = nxt[cur]
                if prev_dir is None or len(outs) == 1:
                    choice = outs[0]
                else:
                    choice = min(outs, key=lambda b: turn_rank(prev_dir, (b[0] - cur[0], b[1] - cur[1])))
                outs.remove(choice)
                prev_dir = (choice[0] - cur[0], choice[1] - cur[1])
                cur = choice
                if cur == start:
                    break
                ring.append(cur)
            rings.append(ring)
    return rings


def _simplify(ring: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    n = len(ring)
    for i in range(n):
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            out.append(b)
    return out


def signed_area(ring) -> float:
    s = 0.0
    for (x0, y0), (x1, y1) in zip(ring, ring[1:] + ring[:1]):
        s += x0 * y1 - x1 * y0
    return s / 2


def exterior_rings(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """Outer boundary of every 4-connected part of ``mask``, holes dropped.

    Rings are open (first vertex not repeated) with positive shoelace area
    in raw (x, y) pixel coordinates.
    """
    rings = [_simplify(r) for r in _trace_rings(mask)]
    # with the region on the left in a y-down frame, outer rings have
    # negative raw shoelace area and holes positive
    outer = [r for r in rings if signed_area(r) < 0]
    return [r[::-1] for r in outer]


def instances_to_geojson(labels: np.ndarray) -> dict:
    labels = validate_instances(labels)
    features = []
    for k in np.unique(labels):
        if k == 0:
            continue
        rings = exterior_rings(labels == k)
        closed = [[list(p) for p in r] + [list(r[0])] for r in rings]
        if len(closed) == 1:
            geometry = {"type": "Polygon", "coordinates": [closed[0]]}
        else:
            geometry = {"type": "MultiPolygon", "coordinates": [[c] for c in closed]}
        features.append(
            {"type": "Feature", "properties": {"instance_id": int(k)}, "geometry": geometry}
        )
    return {"type": "FeatureCollection", "features": features}


def write_instances_geojson(labels: np.ndarray, path: str | None = None) -> dict:
    doc = instances_to_geojson(labels)
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    return doc


def rasterize_geojson(doc: dict, height: int, width: int) -> np.ndarray:
    """Even-odd fill at pixel centres; inverse of :func:`instances_to_geojson`."""
    out = np.zeros((height, width), dtype=np.int32)
    cy = np.arange(height) + 0.5
    cx = np.arange(width) + 0.5
    for feat in doc["features"]:
        geom = feat["geometry"]
        polys = [geom["coordinates"]] if geom["type"] == "Polygon" else geom["coordinates"]
        for poly in polys:
            ring = np.asarray(poly[0], dtype=float)
            inside = np.zeros((height, width), dtype=bool)
            for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
                if y0 == y1:
                    continue
                lo, hi = min(y0, y1), max(y0, y1)
                rows = (cy >= lo) & (cy < hi)
                if not rows.any():
                    continue
                xcross = x0 + (cy[rows] - y0) * (x1 - x0) / (y1 - y0)
                inside[rows] ^= cx[None, :] < xcross[:, None]
            out[inside] = feat["properties"]["instance_id"]
    return out


# ---------------------------------------------------------------------------
# PPM preview


def _to_bytes(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return np.clip((img - lo) * scale, 0, 255).astype(np.uint8)


def write_ppm(path: str, rgb: np.ndarray, labels: np.ndarray | None = None) -> None:
    """Binary P6 of a 3 x H x W array, optionally tinted by instance labels."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ContractError(f"expected 3 x H x W, got {rgb.shape}")
    img = np.stack([_to_bytes(ch) for ch in rgb], axis=-1)
    if labels is not None:
        labels = validate_instances(labels)
        rng = np.random.default_rng(0)
        palette = rng.integers(64, 256, size=(int(labels.max(initial=0)) + 1, 3)).astype(np.uint16)
        sel = labels > 0
        img[sel] = ((img[sel].astype(np.uint16) + palette[labels[sel]]) // 2).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
