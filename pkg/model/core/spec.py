"""
Network architecture description: layer kinds, per-layer settings and the
LeNet layout used for the MNIST experiments.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple

from model.core.errors import ShapeMismatchError

Dims = Tuple[int, int, int]  # (height, width, channels)


class LayerKind(Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"
    RELU = "relu"
    BATCHNORM = "batchnorm"
    SOFTMAX_LOSS = "softmax-loss"


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    filter_height: int = 0
    filter_width: int = 0
    in_channels: int = 0
    out_filters: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0
    name: str = ""

    @classmethod
    def conv(
        cls,
        height: int,
        width: int,
        in_channels: int,
        out_filters: int,
        stride: int = 1,
        padding: int = 0,
        name: str = "",
    ) -> "LayerSpec":
        return cls(
            LayerKind.CONV,
            filter_height=height,
            filter_width=width,
            in_channels=in_channels,
            out_filters=out_filters,
            stride=stride,
            padding=padding,
            name=name,
        )

    @classmethod
    def maxpool(cls, window: int, stride: int, name: str = "") -> "LayerSpec":
        return cls(LayerKind.MAXPOOL, window=window, stride=stride, name=name)

    @classmethod
    def relu(cls, name: str = "") -> "LayerSpec":
        return cls(LayerKind.RELU, name=name)

    @classmethod
    def batchnorm(cls, name: str = "") -> "LayerSpec":
        return cls(LayerKind.BATCHNORM, name=name)

    @classmethod
    def softmax_loss(cls, name: str = "") -> "LayerSpec":
        return cls(LayerKind.SOFTMAX_LOSS, name=name)

    @property
    def is_conv(self) -> bool:
        return self.kind is LayerKind.CONV

    def validate(self, index: int) -> None:
        if self.kind is LayerKind.CONV:
            extents = (
                self.filter_height,
                self.filter_width,
                self.in_channels,
                self.out_filters,
            )
            if min(extents) < 1:
                raise ShapeMismatchError(
                    f"conv extents must be >= 1, got {extents}", index
                )
            if self.stride < 1 or self.padding < 0:
                raise ShapeMismatchError("conv needs stride >= 1, padding >= 0", index)
        elif self.kind is LayerKind.MAXPOOL:
            if self.window < 1 or self.stride < 1:
                raise ShapeMismatchError("pool needs window >= 1, stride >= 1", index)

    def describe(self) -> str:
        if self.kind is LayerKind.CONV:
            text = (
                f"conv {self.filter_height}x{self.filter_width}"
                f"x{self.in_channels}x{self.out_filters}"
            )
            if self.stride != 1 or self.padding != 0:
                text += f" s{self.stride} p{self.padding}"
            return text
        if self.kind is LayerKind.MAXPOOL:
            return f"maxpool {self.window}/{self.stride}"
        return self.kind.value

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind.value}
        if self.name:
            data["name"] = self.name
        if self.kind is LayerKind.CONV:
            data.update(
                filter_height=self.filter_height,
                filter_width=self.filter_width,
                in_channels=self.in_channels,
                out_filters=self.out_filters,
                stride=self.stride,
                padding=self.padding,
            )
        elif self.kind is LayerKind.MAXPOOL:
            data.update(window=self.window, stride=self.stride)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        values = dict(data)
        kind = LayerKind(values.pop("kind"))
        return cls(kind=kind, **values)


@dataclass(frozen=True)
class NetworkSpec:
    input_dims: Dims
    layers: Tuple[LayerSpec, ...]
    class_count: int
    name: str = field(default="network", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_dims", tuple(self.input_dims))
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def conv_indices(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if layer.is_conv]

    @property
    def conv_layers(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.is_conv]

    def layer_output_dims(self) -> List[Dims]:
        """Output (height, width, channels) of every layer, in order."""
        height, width, channels = self.input_dims
        dims: List[Dims] = []
        for index, layer in enumerate(self.layers):
            if layer.kind is LayerKind.CONV:
                if layer.in_channels != channels:
                    raise ShapeMismatchError(
                        f"conv expects {layer.in_channels} input channels, "
                        f"producer gives {channels}",
                        index,
                    )
                height = conv_output_size(
                    height, layer.filter_height, layer.stride, layer.padding
                )
                width = conv_output_size(
                    width, layer.filter_width, layer.stride, layer.padding
                )
                channels = layer.out_filters
            elif layer.kind is LayerKind.MAXPOOL:
                height = conv_output_size(height, layer.window, layer.stride, 0)
                width = conv_output_size(width, layer.window, layer.stride, 0)
            if height < 1 or width < 1:
                raise ShapeMismatchError(
                    f"output dims collapse to {height}x{width}", index
                )
            dims.append((height, width, channels))
        return dims

    def conv_output_dims(self) -> List[Tuple[int, int]]:
        """(H'_i, W'_i) for every conv layer."""
        dims = self.layer_output_dims()
        return [dims[i][:2] for i in self.conv_indices]

    def validate(self) -> None:
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ShapeMismatchError(f"invalid input dims {self.input_dims}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        for index, layer in enumerate(self.layers):
            layer.validate(index)
            if layer.kind is LayerKind.SOFTMAX_LOSS and index != len(self.layers) - 1:
                raise ShapeMismatchError("softmax-loss must be the last layer", index)
        convs = self.conv_indices
        if not convs:
            raise ShapeMismatchError("network has no conv layer")
        for index, layer in enumerate(self.layers):
            if layer.kind is LayerKind.BATCHNORM and index < convs[0]:
                raise ShapeMismatchError("batchnorm needs a preceding conv", index)
        last = self.layers[convs[-1]]
        if last.out_filters != self.class_count:
            raise ShapeMismatchError(
                f"last conv has {last.out_filters} filters, "
                f"expected class_count {self.class_count}",
                convs[-1],
            )
        final = self.layer_output_dims()[-1]
        if final[:2] != (1, 1):
            raise ShapeMismatchError(
                f"network must reduce to 1x1 logits, got {final[0]}x{final[1]}",
                len(self.layers) - 1,
            )

    def with_filter_counts(self, counts: Sequence[int]) -> "NetworkSpec":
        """Same topology with conv i producing counts[i] filters.

        `counts` covers every conv layer; input channels follow the producer.
        """
        convs = self.conv_indices
        if len(counts) != len(convs):
            raise ShapeMismatchError(
                f"expected {len(convs)} filter counts, got {len(counts)}"
            )
        layers = list(self.layers)
        channels = self.input_dims[2]
        for index, count in zip(convs, counts):
            layers[index] = replace(
                layers[index], in_channels=channels, out_filters=int(count)
            )
            channels = int(count)
        return NetworkSpec(self.input_dims, tuple(layers), self.class_count, self.name)

    def describe(self) -> str:
        body = ", ".join(layer.describe() for layer in self.layers)
        height, width, channels = self.input_dims
        return f"{self.name} [{height}x{width}x{channels}] {body}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_dims": list(self.input_dims),
            "class_count": self.class_count,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        return cls(
            input_dims=tuple(data["input_dims"]),
            layers=tuple(LayerSpec.from_dict(layer) for layer in data["layers"]),
            class_count=int(data["class_count"]),
            name=data.get("name", "network"),
        )


def lenet_spec(batchnorm: bool = True) -> NetworkSpec:
    """LeNet for 28x28x1 digits: 5x5x1x20, 5x5x20x50, 4x4x50x500, 1x1x500x10."""

    def block(conv: LayerSpec, pool: bool) -> List[LayerSpec]:
        layers = [conv]
        if batchnorm:
            layers.append(LayerSpec.batchnorm())
        layers.append(LayerSpec.relu())
        if pool:
            layers.append(LayerSpec.maxpool(2, 2))
        return layers

    layers: List[LayerSpec] = []
    layers += block(LayerSpec.conv(5, 5, 1, 20, name="conv1"), pool=True)
    layers += block(LayerSpec.conv(5, 5, 20, 50, name="conv2"), pool=True)
    layers += block(LayerSpec.conv(4, 4, 50, 500, name="conv3"), pool=False)
    layers.append(LayerSpec.conv(1, 1, 500, 10, name="conv4"))
    layers.append(LayerSpec.softmax_loss())
    return NetworkSpec((28, 28, 1), tuple(layers), 10, name="lenet")


def tiny_spec(class_count: int = 2, batchnorm: bool = True) -> NetworkSpec:
    """Small 8x8x1 network for synthetic data: 3x3x1x4, 3x3x4x6, 1x1x6xK."""
    layers: List[LayerSpec] = [LayerSpec.conv(3, 3, 1, 4, name="conv1")]
    if batchnorm:
        layers.append(LayerSpec.batchnorm())
    layers += [LayerSpec.relu(), LayerSpec.maxpool(2, 2)]
    layers.append(LayerSpec.conv(3, 3, 4, 6, name="conv2"))
    if batchnorm:
        layers.append(LayerSpec.batchnorm())
    layers.append(LayerSpec.relu())
    layers.append(LayerSpec.conv(1, 1, 6, class_count, name="conv3"))
    layers.append(LayerSpec.softmax_loss())
    return NetworkSpec((8, 8, 1), tuple(layers), class_count, name="tiny")
