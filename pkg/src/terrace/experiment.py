"""Desk-scale end-to-end experiment: synthetic scenes, training, full
pipeline versus a components-only ablation."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import network
from .inference import predict_logits, sigmoid
from .loss import LossConfig
from .metrics import aggregate, instance_f1
from .postprocess import PostprocessConfig, components_only, extract_instances
from .synthdata import SceneConfig, generate_scene
from .targets import make_targets
from .train import Scene, TrainConfig, train


@dataclass
class DeskRecipe:
    n_train: int = 200
    n_test: int = 50
    train_first_seed: int = 0
    test_first_seed: int = 100_000
    encoder_widths: list[int] = field(default_factory=lambda: [8, 16, 32, 32, 64])
    decoder_widths: list[int] = field(default_factory=lambda: [16, 16, 32, 32, 64])
    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 4
    freeze_epochs: int = 1
    augment: bool = False
    rng_seed: int = 0


def make_scenes(cfg: SceneConfig, first_seed: int, n: int) -> list[Scene]:
    scenes = []
    for seed in range(first_seed, first_seed + n):
        image, labels = generate_scene(cfg, seed)
        scenes.append(Scene(f"scene_{seed}", image.data, make_targets(labels).stack(), labels))
    return scenes


def near_pair_fraction(scenes: list[Scene], d: int = 2) -> float:
    """Fraction of buildings lying within Chebyshev gap ``d`` of another one."""
    near = total = 0
    for s in scenes:
        ids = [k for k in np.unique(s.labels) if k > 0]
        pts = {k: np.argwhere(s.labels == k) for k in ids}
        for a in ids:
            total += 1
            for b in ids:
                if a == b:
                    continue
                gap = np.abs(pts[a][:, None, :] - pts[b][None, :, :]).max(axis=2).min() - 1
                if gap <= d:
                    near += 1
                    break
    return near / total if total else 0.0


def evaluate(weights, scenes: list[Scene], pp: PostprocessConfig | None = None) -> dict:
    pp = pp or PostprocessConfig()
    full, ablation, full_t, ablation_t = [], [], [], []
    for s in scenes:
        z = predict_logits(weights, s.image)
        rf = instance_f1(extract_instances(z, pp), s.labels)
        ra = instance_f1(components_only(sigmoid(z[0]), pp), s.labels)
        full.append(rf)
        ablation.append(ra)
        if s.targets[1].any():
            full_t.append(rf)
            ablation_t.append(ra)
    return {
        "full": aggregate(full),
        "ablation": aggregate(ablation),
        "full_touching": aggregate(full_t),
        "ablation_touching": aggregate(ablation_t),
        "touching_scenes": len(full_t),
    }


def run(recipe: DeskRecipe | None = None, scene_cfg: SceneConfig | None = None) -> dict:
    recipe = recipe or DeskRecipe()
    scene_cfg = scene_cfg or SceneConfig()
    t0 = time.perf_counter()
    train_set = make_scenes(scene_cfg, recipe.train_first_seed, recipe.n_train)
    test_set = make_scenes(scene_cfg, recipe.test_first_seed, recipe.n_test)
    net_cfg = network.NetworkConfig(
        in_channels=train_set[0].image.shape[0],
        encoder_widths=list(recipe.encoder_widths),
        decoder_widths=list(recipe.decoder_widths),
    )
    weights = network.build(net_cfg, recipe.rng_seed)
    t1 = time.perf_counter()
    tcfg = TrainConfig(
        learning_rate=recipe.learning_rate,
        epochs=recipe.epochs,
        batch_size=recipe.batch_size,
        freeze_epochs=recipe.freeze_epochs,
        augment=recipe.augment,
        rng_seed=recipe.rng_seed,
    )
    weights, history = train(tcfg, train_set, weights, LossConfig())
    t2 = time.perf_counter()
    scores = evaluate(weights, test_set)
    t3 = time.perf_counter()
    return {
        "recipe": asdict(recipe),
        "near_pair_fraction_train": near_pair_fraction(train_set),
        "near_pair_fraction_test": near_pair_fraction(test_set),
        **scores,
        "history": history,
        "seconds": {"data": t1 - t0, "train": t2 - t1, "evaluate": t3 - t2, "total": t3 - t0},
        "weights": weights,
    }
