"""
Dense convolutional network: parameters, initialisation, forward inference
and top-1 error.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from model.core.errors import NonFiniteError, ShapeMismatchError
from model.core.spec import LayerKind, NetworkSpec

if TYPE_CHECKING:
    from data.datasets import LabeledDataset

logger = logging.getLogger(__name__)

Params = Dict[str, torch.Tensor]

BN_EPS = 1e-5
RUNNING_SUFFIXES = (".running_mean", ".running_var")


def param_key(layer_index: int, name: str) -> str:
    return f"layer{layer_index}.{name}"


def expected_shapes(spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
    """Parameter name -> shape for every parameterised layer of the spec."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    channels = spec.input_dims[2]
    for index, layer in enumerate(spec.layers):
        if layer.kind is LayerKind.CONV:
            shapes[param_key(index, "weight")] = (
                layer.out_filters,
                layer.in_channels,
                layer.filter_height,
                layer.filter_width,
            )
            shapes[param_key(index, "bias")] = (layer.out_filters,)
            channels = layer.out_filters
        elif layer.kind is LayerKind.BATCHNORM:
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[param_key(index, name)] = (channels,)
    return shapes


@dataclass
class TrainedNetwork:
    spec: NetworkSpec
    parameters: Params

    def trainable_keys(self) -> List[str]:
        return [k for k in self.parameters if not k.endswith(RUNNING_SUFFIXES)]

    def trainable(self) -> Params:
        return {k: self.parameters[k] for k in self.trainable_keys()}

    def copy(self) -> "TrainedNetwork":
        return TrainedNetwork(
            self.spec, {k: v.detach().clone() for k, v in self.parameters.items()}
        )

    def to_dtype(self, dtype: torch.dtype) -> "TrainedNetwork":
        return TrainedNetwork(
            self.spec,
            {k: v.detach().to(dtype).clone() for k, v in self.parameters.items()},
        )

    def conv_weight(self, conv_ordinal: int) -> torch.Tensor:
        """Filters of the conv layer at 0-based position among conv layers."""
        index = self.spec.conv_indices[conv_ordinal]
        return self.parameters[param_key(index, "weight")]

    def weight_count(self) -> int:
        return sum(
            int(self.parameters[param_key(i, "weight")].numel())
            for i in self.spec.conv_indices
        )

    def parameter_count(self) -> int:
        return sum(int(self.parameters[k].numel()) for k in self.trainable_keys())

    def validate(self) -> None:
        """Check parameter shapes against the spec and that values are finite."""
        self.spec.validate()
        shapes = expected_shapes(self.spec)
        if set(shapes) != set(self.parameters):
            missing = sorted(set(shapes) - set(self.parameters))
            extra = sorted(set(self.parameters) - set(shapes))
            raise ShapeMismatchError(
                f"parameter set mismatch (missing {missing}, unexpected {extra})"
            )
        for key, shape in shapes.items():
            tensor = self.parameters[key]
            layer_index = int(key.split(".")[0][len("layer") :])
            if tuple(tensor.shape) != shape:
                raise ShapeMismatchError(
                    f"{key} has shape {tuple(tensor.shape)}, expected {shape}",
                    layer_index,
                )
            if not bool(torch.isfinite(tensor).all()):
                raise NonFiniteError(f"{key} holds non-finite values", layer_index)


def init_network(spec: NetworkSpec, seed: int) -> TrainedNetwork:
    """He-scaled uniform filters (bound sqrt(6 / fan_in)), zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    parameters: Params = {}
    for key, shape in expected_shapes(spec).items():
        name = key.split(".", 1)[1]
        if name == "weight":
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / fan_in)
            values = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        elif name in ("gamma", "running_var"):
            values = np.ones(shape, dtype=np.float32)
        else:
            values = np.zeros(shape, dtype=np.float32)
        parameters[key] = torch.from_numpy(values)
    return TrainedNetwork(spec, parameters)


def run_layers(
    spec: NetworkSpec,
    params: Params,
    x: torch.Tensor,
    training: bool = False,
    update_stats: bool = False,
    bn_momentum: float = 0.1,
) -> torch.Tensor:
    """Apply the layer stack to an NCHW tensor and return (B, class_count) logits.

    In training mode batchnorm normalises with batch statistics; the stored
    running statistics are updated in place only when `update_stats` is set.
    """
    for index, layer in enumerate(spec.layers):
        if layer.kind is LayerKind.CONV:
            weight = params[param_key(index, "weight")]
            if x.shape[1] != weight.shape[1]:
                raise ShapeMismatchError(
                    f"input has {x.shape[1]} channels, "
                    f"filters expect {weight.shape[1]}",
                    index,
                )
            x = F.conv2d(
                x,
                weight,
                params[param_key(index, "bias")],
                stride=layer.stride,
                padding=layer.padding,
            )
        elif layer.kind is LayerKind.MAXPOOL:
            x = F.max_pool2d(x, kernel_size=layer.window, stride=layer.stride)
        elif layer.kind is LayerKind.RELU:
            x = F.relu(x)
        elif layer.kind is LayerKind.BATCHNORM:
            running_mean: Optional[torch.Tensor] = None
            running_var: Optional[torch.Tensor] = None
            if update_stats or not training:
                running_mean = params[param_key(index, "running_mean")]
                running_var = params[param_key(index, "running_var")]
            x = F.batch_norm(
                x,
                running_mean,
                running_var,
                params[param_key(index, "gamma")],
                params[param_key(index, "beta")],
                training=training,
                momentum=bn_momentum,
                eps=BN_EPS,
            )
        if not bool(torch.isfinite(x).all()):
            raise NonFiniteError("non-finite activation", index)
    if x.shape[2:] != (1, 1):
        raise ShapeMismatchError(
            f"final activation is {tuple(x.shape[2:])}, expected 1x1",
            len(spec.layers) - 1,
        )
    return x.flatten(1)


def to_nchw(batch: torch.Tensor, spec: NetworkSpec) -> torch.Tensor:
    if batch.dim() != 4 or tuple(batch.shape[1:]) != tuple(spec.input_dims):
        raise ShapeMismatchError(
            f"batch shape {tuple(batch.shape)} does not match input dims "
            f"{spec.input_dims}",
            0,
        )
    return batch.permute(0, 3, 1, 2)


def forward(net: TrainedNetwork, batch: torch.Tensor) -> torch.Tensor:
    """Inference logits for a (B, H, W, C) batch."""
    params = net.parameters
    dtype = next(iter(params.values())).dtype
    with torch.no_grad():
        x = to_nchw(batch.to(dtype), net.spec)
        return run_layers(net.spec, params, x, training=False)


def iter_batches(count: int, batch_size: int) -> Iterator[slice]:
    for start in range(0, count, batch_size):
        yield slice(start, min(start + batch_size, count))


def predict(
    net: TrainedNetwork, images: torch.Tensor, batch_size: int = 1000
) -> np.ndarray:
    """Top-1 class per image; ties resolve to the lowest class index."""
    predictions = []
    for window in iter_batches(images.shape[0], batch_size):
        logits = forward(net, images[window]).numpy()
        predictions.append(np.argmax(logits, axis=1))
    return np.concatenate(predictions)


def evaluate_error(
    net: TrainedNetwork, data: "LabeledDataset", batch_size: int = 1000
) -> float:
    """Top-1 misclassification rate on a labelled dataset."""
    if len(data) == 0:
        raise ValueError(f"cannot evaluate on empty dataset '{data.name}'")
    labels = data.labels.numpy()
    if labels.min() < 0 or labels.max() >= net.spec.class_count:
        raise ValueError(
            f"labels of '{data.name}' fall outside [0, {net.spec.class_count})"
        )
    predictions = predict(net, data.images, batch_size)
    return float(np.mean(predictions != labels))
