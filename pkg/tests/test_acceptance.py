"""Acceptance checks. Each test prints one PASS/FAIL line with the measured
value next to its tolerance, then asserts."""
import filecmp
import os
import time

import numpy as np
import pytest

from terrace import network, tensor as T
from terrace.cli import main as cli_main
from terrace.experiment import DeskRecipe, make_scenes, run
from terrace.gradcheck import network_gradcheck
from terrace.inference import predict_logits
from terrace.loss import LossConfig, combined_loss, soft_jaccard
from terrace.network import NetworkConfig, build, extend_input_channels, forward
from terrace.postprocess import label_components, watershed
from terrace.synthdata import SceneConfig
from terrace.train import AdamState, TrainConfig, train

from oracles import bfs_components, brute_flood, random_flood_case


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
        return ok

    return emit


def test_gradient_fidelity(report):
    t0 = time.perf_counter()
    worst = {}
    for variant in ("aggregate", "literal"):
        errs = [network_gradcheck(seed, variant, size=64).max_error for seed in range(50)]
        worst[variant] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 120
    detail = (
        f"max rel err aggregate {worst['aggregate']:.2e}, literal {worst['literal']:.2e} "
        f"(limit 1e-4), 50 seeds x 1x11x64x64 float64, {elapsed:.1f} s (limit 120 s)"
    )
    assert report("gradient fidelity", ok, detail)


def test_channel_extension_invariance(report):
    t0 = time.perf_counter()
    mismatches = 0
    rng = np.random.default_rng(0)
    for pair in range(100):
        if pair % 10 == 0:
            w3 = build(NetworkConfig(in_channels=3, encoder_widths=[4, 8, 8, 16, 16]), pair)
            w11 = extend_input_channels(w3, 11)
        size = int(rng.choice([32, 64]))
        rgb = rng.standard_normal((1, 3, size, size)).astype(np.float32)
        extra = rng.standard_normal((1, 8, size, size)).astype(np.float32) * 10
        a = forward(w3, T.Tensor(rgb)).values
        b = forward(w11, T.Tensor(np.concatenate([rgb, extra], axis=1))).values
        mismatches += a.tobytes() != b.tobytes()
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    assert report("channel-extension invariance", ok, f"{mismatches}/100 pairs differ (need 0, bit-exact), {elapsed:.1f} s (limit 30 s)")


def test_freeze_schedule(report):
    recipe = DeskRecipe()
    scenes = make_scenes(SceneConfig(), recipe.train_first_seed, recipe.n_train)
    w3 = build(NetworkConfig(in_channels=3, encoder_widths=recipe.encoder_widths, decoder_widths=recipe.decoder_widths), 0)
    w = extend_input_channels(w3, 11)
    init = {k: v.copy() for k, v in w.params.items()}
    state = AdamState()
    w, _ = train(TrainConfig(epochs=1, freeze_epochs=1, augment=False), scenes, w, state=state)
    enc = [k for k in init if network.is_encoder_param(k)]
    dec = [k for k in init if not network.is_encoder_param(k)]
    enc_same = all(w.params[k].tobytes() == init[k].tobytes() for k in enc)
    # moments of frozen tensors are never created, i.e. they stay at their zero initial value
    moments_same = all((k not in state.m or not state.m[k].any()) and (k not in state.v or not state.v[k].any()) for k in enc)
    dec_changed = all(w.params[k].tobytes() != init[k].tobytes() for k in dec)
    ok = enc_same and moments_same and dec_changed
    detail = (
        f"encoder params identical {enc_same} ({len(enc)} tensors), encoder Adam moments untouched {moments_same}, "
        f"all {len(dec)} decoder/head tensors changed {dec_changed}; 1 epoch on {len(scenes)} scenes"
    )
    assert report("freeze schedule", ok, detail)


def test_watershed_and_labeling_oracles(report):
    t0 = time.perf_counter()
    ws_bad = cc_bad = 0
    for seed in range(500):
        rng = np.random.default_rng(10_000 + seed)
        markers, region, prio = random_flood_case(rng)
        ws_bad += not np.array_equal(watershed(markers, region, prio), brute_flood(markers, region, prio))
        conn = 4 if seed % 2 == 0 else 8
        cc_bad += not np.array_equal(label_components(region, conn), bfs_components(region, conn))
    elapsed = time.perf_counter() - t0
    ok = ws_bad == 0 and cc_bad == 0 and elapsed < 60
    assert report("watershed/labeling oracles", ok, f"watershed mismatches {ws_bad}/500, labeling mismatches {cc_bad}/500 (need 0), {elapsed:.1f} s (limit 60 s)")


def test_inference_protocol(report):
    w = build(NetworkConfig(in_channels=11, encoder_widths=[2, 2, 2, 2, 2]), 0)
    raw = np.random.default_rng(0).random((11, 650, 650)).astype(np.float32)
    out, padded_shape, rec = predict_logits(w, raw, return_padded_shape=True)
    sides = (rec.top, rec.bottom, rec.left, rec.right)
    ok = tuple(padded_shape) == (672, 672) and sides == (11, 11, 11, 11) and out.shape == (2, 650, 650)
    assert report("inference protocol", ok, f"650x650 -> padded {tuple(padded_shape)} with pads {sides} -> output {out.shape[1:]} (need 672x672, 11 px/side, 650x650)")


def test_loss_limit_cases(report):
    rng = np.random.default_rng(1)
    y = (rng.random((2, 2, 16, 16)) < 0.4).astype(float)
    perfect = float(combined_loss(y, T.Tensor(np.where(y > 0, 40.0, -40.0))).L.values)
    worst_alpha = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        yy = (r.random((1, 2, 8, 8)) < 0.5).astype(float)
        br = combined_loss(yy, T.Tensor(r.standard_normal((1, 2, 8, 8)) * 3), LossConfig(alpha=1.0))
        worst_alpha = max(worst_alpha, abs(float(br.L.values) - float(br.H.values)))
    literal_ok = True
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        yy = (r.random((2, 2, 8, 8)) < 0.3).astype(float)
        p = T.Tensor(r.random((2, 2, 8, 8)), requires_grad=True)
        with T.Tape() as tape:
            _, j = soft_jaccard(yy, p, LossConfig(jaccard_variant="literal"))
        tape.backward(j)
        literal_ok &= bool(np.all(p.grad[yy == 0] == 0))
    ok = perfect < 1e-6 and worst_alpha <= 1e-12 and literal_ok
    detail = f"perfect L={perfect:.2e} (<1e-6), |L-H| at alpha=1 {worst_alpha:.1e} (<=1e-12), literal zero grad on negatives {literal_ok}"
    assert report("loss limit cases", ok, detail)


def test_end_to_end_desk_experiment(report):
    result = run(DeskRecipe())
    full, abl = result["full"]["F1"], result["ablation"]["F1"]
    full_t, abl_t = result["full_touching"]["F1"], result["ablation_touching"]["F1"]
    secs = result["seconds"]["total"]
    frac = result["near_pair_fraction_test"]
    ok = full >= 0.70 and full_t > abl_t and secs <= 1200 and frac >= 0.30
    detail = (
        f"pipeline F1 {full:.4f} (need >= 0.70), ablation F1 {abl:.4f}; touching-pair scenes "
        f"({result['touching_scenes']}): pipeline {full_t:.4f} vs ablation {abl_t:.4f} (need >); "
        f"near-pair buildings {frac:.0%} (need >= 30%); {secs:.0f} s (limit 1200 s)"
    )
    assert report("end-to-end desk experiment", ok, detail)


def _chain(root, threads):
    tiny = ["--set", "network.encoder_widths=[2,4,4,8,8]", "--set", "network.decoder_widths=[4,4,4,8,8]"]
    thr = ["--threads", str(threads)]
    data, run_dir, pred, inst = (os.path.join(root, d) for d in ("data", "train", "pred", "inst"))
    steps = [
        ["gen-data", "--out", data, "--n-scenes", "4", *thr],
        ["train", "--data", data, "--out", run_dir, "--set", "train.epochs=2", "--set", "train.batch_size=2", *tiny, *thr],
        ["predict", "--checkpoint", os.path.join(run_dir, "checkpoint"), "--input", data, "--out", pred, *thr],
        ["postprocess", "--input", pred, "--out", inst, *thr],
        ["evaluate", "--pred", inst, "--gt", data, "--out", os.path.join(root, "report.json"), *thr],
    ]
    return [cli_main(s) for s in steps]


def _tree(root):
    out = []
    for dirpath, _, files in os.walk(root):
        out += [os.path.relpath(os.path.join(dirpath, f), root) for f in files]
    return sorted(out)


def test_determinism(report, tmp_path):
    roots = [str(tmp_path / name) for name in ("a", "b", "c")]
    codes = [_chain(roots[0], 1), _chain(roots[1], 1), _chain(roots[2], 4)]
    files = _tree(roots[0])
    differ = []
    for other in roots[1:]:
        if _tree(other) != files:
            differ.append(f"file list {other}")
            continue
        differ += [f for f in files if not filecmp.cmp(os.path.join(roots[0], f), os.path.join(other, f), shallow=False)]
    ok = all(c == [0] * 5 for c in codes) and not differ
    detail = f"{len(files)} artifacts compared across 2 runs at --threads 1 and one at --threads 4; differing: {differ or 'none'}; exit codes {codes[0]}"
    assert report("determinism", ok, detail)
