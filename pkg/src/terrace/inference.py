"""Whole-image prediction: normalize, pad to the grid, forward, crop back."""
from __future__ import annotations

import numpy as np

from . import network
from .network import ModelWeights
from .preprocess import crop_back, pad_to_grid
from .tensor import no_grad
from .train import prepare_image


def predict_logits(w: ModelWeights, raw: np.ndarray, return_padded_shape: bool = False):
    """Raw C x H x W image -> 2 x H x W logits."""
    x = prepare_image(raw)
    padded, rec = pad_to_grid(x, network.GRID)
    with no_grad():
        z = network.forward(w, padded[None].astype(np.float32)).values[0]
    out = crop_back(z, rec)
    if return_padded_shape:
        return out, padded.shape[1:], rec
    return out


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e))


def predict_probabilities(w: ModelWeights, raw: np.ndarray) -> np.ndarray:
    return sigmoid(predict_logits(w, raw)).astype(np.float32)
