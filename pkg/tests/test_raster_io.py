import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from terrace.errors import FormatError, TruncationError
from terrace.raster_io import (
    RasterContainer,
    compact_labels,
    instances_to_geojson,
    rasterize_geojson,
    read_instances,
    read_raster,
    signed_area,
    write_instances,
    write_instances_geojson,
    write_ppm,
    write_raster,
)


def test_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((4, 5, 7)).astype(np.float32)
    data[0, 0, 0] = np.nan
    data[1, 0, 0] = -0.0
    path = str(tmp_path / "x.rst")
    write_raster(path, RasterContainer(data, "image"))
    r = read_raster(path)
    assert r.data.tobytes() == data.tobytes()
    assert r.semantic == "image"
    header = json.load(open(path + ".json"))
    assert header == {"width": 7, "height": 5, "channels": 4, "dtype": "f32le", "layout": "chw", "semantic": "image"}


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6))))
def test_roundtrip_property(tmp_path_factory, data):
    path = str(tmp_path_factory.mktemp("rt") / "r.rst")
    write_raster(path, RasterContainer(data))
    with open(path, "rb") as fh:
        written = fh.read()
    write_raster(path, read_raster(path))
    with open(path, "rb") as fh:
        assert fh.read() == written == data.astype("<f4").tobytes()


def test_size_of_full_tile():
    r = RasterContainer(np.zeros((11, 650, 650), dtype=np.float32))
    assert r.nbytes() == 650 * 650 * 11 * 4 == 18_590_000


def test_truncation_detected(tmp_path):
    path = str(tmp_path / "t.rst")
    write_raster(path, RasterContainer(np.zeros((3, 4, 4), dtype=np.float32)))
    header = json.load(open(path + ".json"))
    header["channels"] = 4
    json.dump(header, open(path + ".json", "w"))
    with pytest.raises(TruncationError):
        read_raster(path)


def test_missing_or_corrupt_header(tmp_path):
    path = str(tmp_path / "h.rst")
    open(path, "wb").write(b"\x00" * 16)
    with pytest.raises(FormatError):
        read_raster(path)
    open(path + ".json", "w").write("{not json")
    with pytest.raises(FormatError):
        read_raster(path)
    open(path + ".json", "w").write(json.dumps({"width": 2, "height": 2, "channels": 1, "dtype": "f64", "layout": "chw"}))
    with pytest.raises(FormatError):
        read_raster(path)


def test_instances_roundtrip(tmp_path):
    labels = np.array([[0, 1, 1], [2, 0, 3]])
    write_instances(str(tmp_path / "l.rst"), labels)
    assert np.array_equal(read_instances(str(tmp_path / "l.rst")), labels)


def test_compact_labels_scan_order():
    labels = np.array([[0, 7, 7], [3, 0, 9]])
    assert compact_labels(labels).tolist() == [[0, 1, 1], [2, 0, 3]]


def test_geojson_empty():
    doc = instances_to_geojson(np.zeros((4, 4), dtype=int))
    assert doc == {"type": "FeatureCollection", "features": []}


def test_geojson_unit_square_at_origin():
    labels = np.zeros((4, 4), dtype=int)
    labels[:2, :2] = 1
    doc = instances_to_geojson(labels)
    assert len(doc["features"]) == 1
    feat = doc["features"][0]
    assert feat["properties"]["instance_id"] == 1
    ring = feat["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1]
    xs = [p[0] for p in ring]
    ys = [p[1] for p in ring]
    assert (min(xs), min(ys), max(xs), max(ys)) == (0, 0, 2, 2)
    assert sorted(map(tuple, ring[:-1])) == [(0, 0), (0, 2), (2, 0), (2, 2)]
    assert signed_area([tuple(p) for p in ring[:-1]]) > 0


def test_geojson_two_rectangles_rasterize_back():
    labels = np.zeros((8, 10), dtype=int)
    labels[1:4, 1:6] = 1
    labels[5:8, 3:10] = 2
    doc = instances_to_geojson(labels)
    assert len(doc["features"]) == 2
    assert np.array_equal(rasterize_geojson(doc, 8, 10), labels)


def test_geojson_drops_holes():
    labels = np.zeros((5, 5), dtype=int)
    labels[0:5, 0:5] = 1
    labels[2, 2] = 0
    doc = instances_to_geojson(labels)
    assert len(doc["features"][0]["geometry"]["coordinates"]) == 1
    filled = rasterize_geojson(doc, 5, 5)
    assert np.all(filled == 1)


def _hole_free(mask):
    from scipy import ndimage

    return np.array_equal(ndimage.binary_fill_holes(mask), mask)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_polygonize_rasterize_roundtrip(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 14, size=2)
    labels = rng.integers(0, 4, size=(h, w))
    # the property covers hole-free instances only
    for k in range(1, 4):
        if not _hole_free(labels == k):
            labels[labels == k] = 0
    back = rasterize_geojson(instances_to_geojson(labels), h, w)
    assert np.array_equal(back, labels)


def test_write_geojson_file(tmp_path):
    labels = np.zeros((3, 3), dtype=int)
    labels[1, 1] = 5
    path = str(tmp_path / "o.geojson")
    write_instances_geojson(labels, path)
    doc = json.load(open(path))
    assert doc["features"][0]["geometry"]["type"] == "Polygon"


def test_ppm_export(tmp_path):
    rgb = np.random.default_rng(0).random((3, 4, 5))
    labels = np.zeros((4, 5), dtype=int)
    labels[1:3, 1:3] = 1
    path = str(tmp_path / "p.ppm")
    write_ppm(path, rgb, labels)
    blob = open(path, "rb").read()
    assert blob.startswith(b"P6\n5 4\n255\n")
    assert len(blob) == len(b"P6\n5 4\n255\n") + 4 * 5 * 3
