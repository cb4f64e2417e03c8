"""Finite-difference check of the full network + combined loss in float64."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network, tensor as T
from .loss import LossConfig, combined_loss
from .network import NetworkConfig

TOY_CONFIG = NetworkConfig(in_channels=11, encoder_widths=[2, 2, 4, 4, 4])
# one early, one deep, one bottleneck, one decoder and the head
PROBED = ("enc1.conv1.weight", "enc3.conv2.weight", "enc5.conv1.weight", "dec2.conv1.weight", "dec1.conv2.bias", "head.weight")


@dataclass
class GradcheckResult:
    seed: int
    variant: str
    max_error: float
    probes: int

    @property
    def passed(self) -> bool:
        return bool(self.max_error < 1e-4)


def network_gradcheck(
    seed: int,
    variant: str = "aggregate",
    config: NetworkConfig | None = None,
    size: int = 64,
    probes_per_tensor: int = 2,
    eps: float = 1e-6,
    floor: float = 1e-5,
) -> GradcheckResult:
    """Compare analytic gradients with central differences for ``seed``.

    Inputs, targets and probe positions all derive from ``seed``; the input
    is a probe target as well, so the first convolution is checked on both
    sides. The error is relative, |a - n| / max(|a|, |n|, floor); the floor
    only matters for gradients so small that the difference quotient is
    dominated by round-off.
    """
    config = config or TOY_CONFIG
    rng = np.random.default_rng(seed)
    w = network.build(config, seed, dtype=np.float64)
    # small random biases keep ReLUs away from exact zeros
    for name, p in w.params.items():
        if name.endswith(".bias"):
            p[:] = 0.05 * rng.standard_normal(p.shape)
    x = rng.standard_normal((1, config.in_channels, size, size))
    y = (rng.random((1, 2, size, size)) < 0.3).astype(np.float64)
    loss_cfg = LossConfig(jaccard_variant=variant)
    worst = 0.0
    n = 0
    for name in PROBED + ("input",):
        base = x if name == "input" else w.params[name]

        def f(t, name=name):
            params = {k: T.Tensor(v) for k, v in w.params.items()}
            inp = T.Tensor(x)
            if name == "input":
                inp = t
            else:
                params[name] = t
            return combined_loss(y, network.forward(w, inp, params), loss_cfg).L

        idx = [tuple(int(rng.integers(s)) for s in base.shape) for _ in range(probes_per_tensor)]
        err = T.grad_check(f, base, eps, idx, floor=floor)
        worst = max(worst, err) if not np.isnan(err) else float("nan")
        n += len(idx)
        if np.isnan(worst):
            break
    return GradcheckResult(seed, variant, float(worst), n)
