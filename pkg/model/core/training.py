"""
Softmax cross-entropy loss, exact gradients, SGD with momentum and the
seeded mini-batch training loop.
"""

import logging
from dataclasses import replace
from typing import TYPE_CHECKING, Iterator, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from model.config.model_config import TrainConfig
from model.core.errors import NonFiniteError, ShapeMismatchError, TrainingDivergedError
from model.core.network import Params, TrainedNetwork, run_layers, to_nchw
from model.core.spec import LayerKind

if TYPE_CHECKING:
    from data.datasets import LabeledDataset

logger = logging.getLogger(__name__)


def _loss_and_grads(
    net: TrainedNetwork,
    images: torch.Tensor,
    labels: torch.Tensor,
    training: bool,
    update_stats: bool = False,
    bn_momentum: float = 0.1,
) -> Tuple[float, Params]:
    if images.shape[0] == 0:
        raise ValueError("loss needs a non-empty batch")
    dtype = next(iter(net.parameters.values())).dtype
    leaves = {
        key: net.parameters[key].detach().requires_grad_(True)
        for key in net.trainable_keys()
    }
    merged = dict(net.parameters)
    merged.update(leaves)
    x = to_nchw(images.to(dtype), net.spec)
    logits = run_layers(net.spec, merged, x, training, update_stats, bn_momentum)
    loss = F.cross_entropy(logits, labels.long())
    if not bool(torch.isfinite(loss)):
        raise NonFiniteError(f"non-finite loss {loss.detach().item()}")
    grads = torch.autograd.grad(loss, list(leaves.values()))
    return loss.detach().item(), dict(zip(leaves, grads))


def loss_and_gradients(
    net: TrainedNetwork,
    images: torch.Tensor,
    labels: torch.Tensor,
    training: bool = False,
) -> Tuple[float, Params]:
    """Mean softmax cross-entropy over the batch and its gradient per parameter.

    With `training` set, batchnorm uses batch statistics; stored running
    statistics are never modified here.
    """
    return _loss_and_grads(net, images, labels, training)


def sgd_step(
    params: Params,
    grads: Params,
    config: TrainConfig,
    velocity: Optional[Params] = None,
) -> Tuple[Params, Params]:
    """One momentum step: v' = m v + g; p' = p - lr v' - lr wd p.

    Returns fresh (params, velocity) dicts; inputs are left untouched.
    """
    new_params: Params = {}
    new_velocity: Params = {}
    lr = config.learning_rate
    with torch.no_grad():
        for key, value in params.items():
            grad = grads.get(key)
            if grad is None or grad.shape != value.shape:
                raise ShapeMismatchError(
                    f"gradient for {key} missing or shaped "
                    f"{None if grad is None else tuple(grad.shape)}"
                )
            if velocity is not None and key in velocity:
                step = config.momentum * velocity[key] + grad
            else:
                step = grad.clone()
            new_velocity[key] = step
            new_params[key] = value - lr * step - lr * config.weight_decay * value
    return new_params, new_velocity


def _training_windows(
    count: int, batch_size: int, min_batch: int = 1
) -> Iterator[slice]:
    """Consecutive batches; a trailing single example joins the previous batch.

    Batches are never smaller than `min_batch` unless the whole dataset is.
    """
    starts = list(range(0, count, max(batch_size, min_batch)))
    if len(starts) > 1 and count - starts[-1] == 1:
        starts.pop()
    for position, start in enumerate(starts):
        end = starts[position + 1] if position + 1 < len(starts) else count
        yield slice(start, end)


def _first_batchnorm(net: TrainedNetwork) -> Optional[int]:
    for index, layer in enumerate(net.spec.layers):
        if layer.kind is LayerKind.BATCHNORM:
            return index
    return None


def train(
    net: TrainedNetwork,
    dataset: "LabeledDataset",
    config: TrainConfig,
    max_steps: Optional[int] = None,
) -> TrainedNetwork:
    """Seeded mini-batch SGD on a copy of `net`.

    Runs `config.epochs` passes, or exactly `max_steps` batches when given.
    Batch order is a pure function of `config.seed`.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError(f"cannot train on empty dataset '{dataset.name}'")
    # batch statistics over a single example are undefined on a 1x1 map
    min_batch = 1
    batchnorm = _first_batchnorm(net)
    if batchnorm is not None:
        min_batch = 2
        if len(dataset) < min_batch:
            raise ShapeMismatchError(
                f"batchnorm needs at least {min_batch} examples per batch, "
                f"dataset '{dataset.name}' has {len(dataset)}",
                batchnorm,
            )
    result = net.copy()
    rng = np.random.default_rng(config.seed)
    velocity: Optional[Params] = None
    learning_rate = config.learning_rate
    step = 0
    epoch = 0

    while True:
        if max_steps is None and epoch >= config.epochs:
            break
        if max_steps is not None and step >= max_steps:
            break
        order = rng.permutation(len(dataset))
        epoch_config = replace(config, learning_rate=learning_rate)
        losses: List[float] = []
        for batch_index, window in enumerate(
            _training_windows(len(dataset), config.batch_size, min_batch)
        ):
            if max_steps is not None and step >= max_steps:
                break
            index = torch.from_numpy(order[window])
            images = dataset.images.index_select(0, index)
            labels = dataset.labels.index_select(0, index)
            try:
                loss, grads = _loss_and_grads(
                    result,
                    images,
                    labels,
                    training=True,
                    update_stats=True,
                    bn_momentum=config.bn_momentum,
                )
            except NonFiniteError as e:
                raise TrainingDivergedError(epoch, batch_index, float("nan")) from e
            updated, velocity = sgd_step(
                result.trainable(), grads, epoch_config, velocity
            )
            result.parameters.update(updated)
            losses.append(loss)
            step += 1
        if losses:
            logger.info(
                f"Epoch {epoch + 1}: mean loss {np.mean(losses):.4f} over "
                f"{len(losses)} batches (lr {learning_rate:.5g})"
            )
        epoch += 1
        learning_rate *= config.lr_decay
    return result

