"""Encoder-decoder network with skip connections and a two-channel head.

The encoder is five blocks of (conv3x3, ReLU, conv3x3, ReLU), each followed
by a 2x2 max-pool, so inputs must be divisible by 32. Each of the five
decoder blocks upsamples (nearest neighbour), concatenates the encoder
output of matching size, and applies two conv3x3+ReLU. A 1x1 convolution
maps to two logit channels: building footprint and touching border.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, FormatError, ShapeError

N_BLOCKS = 5
GRID = 2**N_BLOCKS
OUT_CHANNELS = 2


def _default_decoder(encoder_widths):
    top = encoder_widths[-1]
    return [max(1, top >> (N_BLOCKS - 1 - i)) for i in range(N_BLOCKS)]


@dataclass
class NetworkConfig:
    in_channels: int = 11
    encoder_widths: list[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    # decoder_widths[i] is the width of the decoder block fed by encoder block i
    decoder_widths: list[int] | None = None
    out_channels: int = OUT_CHANNELS

    def __post_init__(self):
        self.encoder_widths = [int(v) for v in self.encoder_widths]
        if self.decoder_widths is None:
            self.decoder_widths = _default_decoder(self.encoder_widths)
        self.decoder_widths = [int(v) for v in self.decoder_widths]
        self.validate()

    def validate(self) -> None:
        if len(self.encoder_widths) != N_BLOCKS:
            raise ConfigError(f"need exactly {N_BLOCKS} encoder widths, got {len(self.encoder_widths)}")
        if len(self.decoder_widths) != N_BLOCKS:
            raise ConfigError(f"need exactly {N_BLOCKS} decoder widths, got {len(self.decoder_widths)}")
        if min(self.encoder_widths + self.decoder_widths) < 1:
            raise ConfigError("all widths must be positive")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be positive")
        if self.out_channels != OUT_CHANNELS:
            raise ConfigError(f"out_channels is fixed at {OUT_CHANNELS}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def layer_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in topology order."""
    shapes = []

    def conv(prefix, cin, cout, k=3):
        shapes.append((f"{prefix}.weight", (cout, cin, k, k)))
        shapes.append((f"{prefix}.bias", (cout,)))

    cin = cfg.in_channels
    for i, w in enumerate(cfg.encoder_widths, start=1):
        conv(f"enc{i}.conv1", cin, w)
        conv(f"enc{i}.conv2", w, w)
        cin = w
    below = cfg.encoder_widths[-1]
    for i in range(N_BLOCKS, 0, -1):
        w = cfg.decoder_widths[i - 1]
        conv(f"dec{i}.conv1", below + cfg.encoder_widths[i - 1], w)
        conv(f"dec{i}.conv2", w, w)
        below = w
    conv("head", below, cfg.out_channels, k=1)
    return shapes


@dataclass
class ModelWeights:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    frozen: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.params:
            self.frozen.setdefault(name, False)

    @property
    def names(self) -> list[str]:
        return list(self.params)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, dict(self.frozen))

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.frozen))


def is_encoder_param(name: str) -> bool:
    return name.startswith("enc")


def build(config: NetworkConfig, rng_seed: int, dtype=np.float32) -> ModelWeights:
    """He-uniform weights, zero biases."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    params = {}
    for name, shape in layer_shapes(config):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelWeights(config, params)


def forward(w: ModelWeights, batch, param_tensors: dict[str, T.Tensor] | None = None) -> T.Tensor:
    """Logits N x 2 x H x W.

    ``param_tensors`` lets the caller pass pre-wrapped parameter tensors
    (with ``requires_grad``) so gradients can be read back after backward.
    """
    x = batch if isinstance(batch, T.Tensor) else T.Tensor(batch)
    cfg = w.config
    if x.values.ndim != 4:
        raise ShapeError(f"forward expects N x C x H x W, got {x.shape}")
    _, c, h, wd = x.shape
    if c != cfg.in_channels:
        raise ShapeError(f"network takes {cfg.in_channels} channels, batch has {c}")
    if h % GRID or wd % GRID:
        raise ShapeError(f"H={h}, W={wd} must be divisible by {GRID}; pad with preprocess.pad_to_grid first")
    p = param_tensors if param_tensors is not None else {k: T.Tensor(v) for k, v in w.params.items()}

    def conv_relu(inp, prefix, first=False):
        y = T.conv3x3(inp, p[f"{prefix}.weight"], channel_ordered=first)
        return T.relu(T.add_bias(y, p[f"{prefix}.bias"]))

    skips = []
    for i in range(1, N_BLOCKS + 1):
        x = conv_relu(x, f"enc{i}.conv1", first=(i == 1))
        x = conv_relu(x, f"enc{i}.conv2")
        skips.append(x)
        x = T.maxpool2(x)
    for i in range(N_BLOCKS, 0, -1):
        x = T.concat_channels([T.upsample_nearest2(x), skips[i - 1]])
        x = conv_relu(x, f"dec{i}.conv1")
        x = conv_relu(x, f"dec{i}.conv2")
    return T.add_bias(T.conv1x1(x, p["head.weight"]), p["head.bias"])


def extend_input_channels(w: ModelWeights, new_in: int) -> ModelWeights:
    """Widen the first convolution; new input channels get zero kernels."""
    if w.config.in_channels != 3:
        raise ContractError(f"extension starts from a 3-channel model, got {w.config.in_channels}")
    if new_in <= 3:
        raise ContractError(f"new_in must exceed 3, got {new_in}")
    cfg = NetworkConfig(
        in_channels=new_in,
        encoder_widths=list(w.config.encoder_widths),
        decoder_widths=list(w.config.decoder_widths),
    )
    params = dict(w.params)
    old = w.params["enc1.conv1.weight"]
    wide = np.zeros((old.shape[0], new_in) + old.shape[2:], dtype=old.dtype)
    wide[:, :3] = old
    params["enc1.conv1.weight"] = wide
    return ModelWeights(cfg, params, dict(w.frozen))


def set_freeze(w: ModelWeights, scope: str) -> ModelWeights:
    if scope not in ("encoder", "none"):
        raise ContractError(f"freeze scope must be 'encoder' or 'none', got {scope!r}")
    frozen = {name: scope == "encoder" and is_encoder_param(name) for name in w.params}
    return ModelWeights(w.config, w.params, frozen)


# ---------------------------------------------------------------------------
# checkpoints: manifest.json + one raw little-endian blob per parameter

MANIFEST = "manifest.json"


def save_checkpoint(w: ModelWeights, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    entries = []
    for name, arr in w.params.items():
        fname = f"{name}.bin"
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {
        "format": "terrace-checkpoint/1",
        "dtype": "f32le",
        "config": asdict(w.config),
        "fingerprint": w.config.fingerprint(),
        "frozen": [n for n, f in w.frozen.items() if f],
        "parameters": entries,
    }
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str) -> ModelWeights:
    mpath = os.path.join(path, MANIFEST)
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{mpath}: {exc}") from exc
    try:
        cfg = NetworkConfig(**manifest["config"])
        entries = manifest["parameters"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{mpath}: malformed manifest ({exc})") from exc
    if cfg.fingerprint() != manifest.get("fingerprint"):
        raise FormatError(f"{mpath}: config fingerprint mismatch")
    expected = dict(layer_shapes(cfg))
    params = {}
    for e in entries:
        shape = tuple(e["shape"])
        if expected.get(e["name"]) != shape:
            raise FormatError(f"{mpath}: parameter {e['name']} has unexpected shape {shape}")
        raw = np.fromfile(os.path.join(path, e["file"]), dtype="<f4")
        if raw.size != int(np.prod(shape)):
            raise FormatError(f"{e['file']}: expected {int(np.prod(shape))} values, found {raw.size}")
        params[e["name"]] = raw.reshape(shape).astype(np.float32)
    if list(params) != list(expected):
        raise FormatError(f"{mpath}: parameter list does not match topology")
    frozen = {n: n in set(manifest.get("frozen", [])) for n in params}
    return ModelWeights(cfg, params, frozen)
