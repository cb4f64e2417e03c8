import os

import numpy as np
import pytest

from terrace.errors import ConfigError
from terrace.raster_io import read_instances, read_raster
from terrace.synthdata import SceneConfig, generate_dataset, generate_scene, load_manifest, touching_pair_count
from terrace.targets import make_targets


def _near_pairs(labels, d=2):
    ids = [k for k in np.unique(labels) if k > 0]
    coords = {k: np.argwhere(labels == k) for k in ids}
    pairs = 0
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            pa, pb = coords[a], coords[b]
            gap = np.max(np.abs(pa[:, None, :] - pb[None, :, :]), axis=2).min() - 1
            pairs += gap <= d
    return pairs


def test_deterministic():
    cfg = SceneConfig()
    a_img, a_lab = generate_scene(cfg, 4)
    b_img, b_lab = generate_scene(cfg, 4)
    assert a_img.data.tobytes() == b_img.data.tobytes()
    assert np.array_equal(a_lab, b_lab)
    c_img, _ = generate_scene(cfg, 5)
    assert c_img.data.tobytes() != a_img.data.tobytes()


def test_shape_and_dtype():
    img, lab = generate_scene(SceneConfig(), 0)
    assert img.data.shape == (11, 96, 96) and img.data.dtype == np.float32
    assert lab.shape == (96, 96)


def test_empty_scene():
    img, lab = generate_scene(SceneConfig(buildings_per_scene=(0, 0)), 0)
    assert lab.max() == 0
    assert not make_targets(lab).footprint.any()


def test_pair_count():
    cfg = SceneConfig()
    assert touching_pair_count(cfg, 6) == 2
    assert touching_pair_count(cfg, 5) == 1
    assert touching_pair_count(SceneConfig(touching_pair_fraction=0), 6) == 0


def test_six_buildings_have_two_near_pairs():
    cfg = SceneConfig(buildings_per_scene=(6, 6))
    for seed in range(10):
        _, lab = generate_scene(cfg, seed)
        assert lab.max() == 6
        assert _near_pairs(lab) >= 2
        assert make_targets(lab).touch.any()


def test_instances_are_4_connected():
    from terrace.postprocess import label_components

    for seed in range(10):
        _, lab = generate_scene(SceneConfig(), seed)
        for k in range(1, lab.max() + 1):
            assert label_components(lab == k).max() == 1


def test_dataset_manifest_recount(tmp_path):
    cfg = SceneConfig()
    manifest = generate_dataset(cfg, 4, str(tmp_path), first_seed=10)
    assert load_manifest(str(tmp_path))["scenes"] == manifest["scenes"]
    for entry in manifest["scenes"]:
        lab = read_instances(os.path.join(tmp_path, entry["labels"]))
        assert lab.max() == entry["instances"]
        tgt = read_raster(os.path.join(tmp_path, entry["targets"]))
        assert tgt.semantic == "targets"
        assert np.array_equal(tgt.data[0] > 0, lab > 0)
        img = read_raster(os.path.join(tmp_path, entry["image"]))
        _, ref = generate_scene(cfg, entry["seed"])
        assert np.array_equal(ref, lab) and img.data.shape[0] == 11


def test_building_channel_is_linearly_separable():
    correct = total = 0
    for seed in range(5):
        img, lab = generate_scene(SceneConfig(), seed)
        pred = img.data[3] > 0.5
        correct += int(np.count_nonzero(pred == (lab > 0)))
        total += lab.size
    assert correct / total >= 0.95


def test_config_validation():
    with pytest.raises(ConfigError):
        SceneConfig(pair_gaps=(3,))
    with pytest.raises(ConfigError):
        SceneConfig(buildings_per_scene=(5, 2))
