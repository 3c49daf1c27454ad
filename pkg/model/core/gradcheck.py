import logging
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from model.core.network import Params, TrainedNetwork, run_layers, to_nchw
from model.core.training import loss_and_gradients

logger = logging.getLogger(__name__)

# Gradients smaller than this are compared in absolute rather than relative terms.
SCALE_FLOOR = 1e-3


def _loss(
    net: TrainedNetwork, images: torch.Tensor, labels: torch.Tensor, training: bool
) -> float:
    with torch.no_grad():
        x = to_nchw(images, net.spec)
        logits = run_layers(net.spec, net.parameters, x, training=training)
        return float(F.cross_entropy(logits, labels.long()))


def gradient_check(
    net: TrainedNetwork,
    images: torch.Tensor,
    labels: torch.Tensor,
    epsilon: float = 1e-3,
    samples: int = 100,
    seed: int = 0,
    training: bool = False,
    analytic: Optional[Params] = None,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Everything is re-evaluated in float64. `analytic` replaces the gradients
    computed by `loss_and_gradients`, which lets callers audit externally
    produced gradients.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    net64 = net.to_dtype(torch.float64)
    images64 = images.to(torch.float64)
    if analytic is None:
        _, analytic = loss_and_gradients(net64, images64, labels, training=training)

    keys = net64.trainable_keys()
    sizes = np.array([net64.parameters[key].numel() for key in keys])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(samples, total), replace=False))

    worst = 0.0
    for flat in picks:
        slot = int(np.searchsorted(offsets, flat, side="right")) - 1
        key = keys[slot]
        local = int(flat - offsets[slot])
        values = net64.parameters[key].view(-1)
        original = float(values[local])

        values[local] = original + epsilon
        plus = _loss(net64, images64, labels, training)
        values[local] = original - epsilon
        minus = _loss(net64, images64, labels, training)
        values[local] = original

        numeric = (plus - minus) / (2.0 * epsilon)
        exact = float(analytic[key].reshape(-1)[local])
        scale = max(abs(exact), abs(numeric), SCALE_FLOOR)
        worst = max(worst, abs(exact - numeric) / scale)

    logger.debug(f"Gradient check over {len(picks)} parameters: max gap {worst:.3e}")
    return worst
