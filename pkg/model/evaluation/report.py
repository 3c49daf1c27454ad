"""
Weight, multiplication and feature-map accounting for a compressed network,
with per-layer ratios and a table of the original versus new filter shapes.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from model.compression.genome import (
    FilterShape,
    Individual,
    MaskLayout,
    compressed_shapes,
    surviving_counts,
)
from model.core.network import TrainedNetwork, expected_shapes
from model.core.spec import LayerKind, NetworkSpec

logger = logging.getLogger(__name__)

BYTES_PER_VALUE = 4
MEGABYTE = 2**20

# Per-layer kept filter counts reported for the compressed AlexNet, with the
# class layer last.
ALEXNET_COMPRESSED_COUNTS = (56, 120, 190, 188, 144, 1386, 1848, 1000)


def megabytes(count: int) -> float:
    return count * BYTES_PER_VALUE / MEGABYTE


@dataclass(frozen=True)
class LayerStats:
    index: int
    name: str
    original: FilterShape
    compressed: FilterShape
    output_height: int
    output_width: int
    original_weights: int
    compressed_weights: int
    original_mults: int
    compressed_mults: int
    original_fmap: int
    compressed_fmap: int
    r_c: float
    r_s: float
    r_f: float


@dataclass(frozen=True)
class CompressionReport:
    layers: Tuple[LayerStats, ...]
    error_before: Optional[float] = None
    error_after: Optional[float] = None
    original_extra_params: int = 0
    compressed_extra_params: int = 0
    counts: Tuple[int, ...] = field(default=())

    def _total(self, name: str) -> int:
        return sum(getattr(layer, name) for layer in self.layers)

    @property
    def original_weights(self) -> int:
        return self._total("original_weights")

    @property
    def compressed_weights(self) -> int:
        return self._total("compressed_weights")

    @property
    def r_c(self) -> float:
        return self.original_weights / self.compressed_weights

    @property
    def r_s(self) -> float:
        return self._total("original_mults") / self._total("compressed_mults")

    @property
    def r_f(self) -> float:
        return self._total("original_fmap") / self._total("compressed_fmap")

    @property
    def original_memory_mb(self) -> float:
        return megabytes(self.original_weights)

    @property
    def compressed_memory_mb(self) -> float:
        return megabytes(self.compressed_weights)

    @property
    def original_fmap_mb(self) -> float:
        return megabytes(self._total("original_fmap"))

    @property
    def compressed_fmap_mb(self) -> float:
        return megabytes(self._total("compressed_fmap"))


def layer_ratios(
    layout: MaskLayout,
    counts: Sequence[int],
    output_dims: Sequence[Tuple[int, int]],
    i: int,
) -> Tuple[float, float, float]:
    """(r_c, r_s, r_f) of the 1-based conv layer i under the surviving counts."""
    if not 1 <= i <= layout.depth:
        raise ValueError(f"layer index {i} outside 1..{layout.depth}")
    if len(counts) != layout.depth + 1 or len(output_dims) != layout.depth:
        raise ValueError("counts and output dims do not match the layout")
    originals = [layout.input_channels] + layout.filter_counts
    if counts[i] < 1 or counts[i - 1] < 1:
        raise ValueError(f"layer {i} keeps no filter")
    ratio = (originals[i - 1] * originals[i]) / (counts[i - 1] * counts[i])
    return ratio, ratio, originals[i] / counts[i]


def fmap_areas(spec: NetworkSpec) -> List[List[int]]:
    """Spatial areas of the conv output and of every pooled copy of it.

    Relu and batchnorm outputs are treated as in-place and not counted.
    """
    dims = spec.layer_output_dims()
    areas: List[List[int]] = []
    for index, layer in enumerate(spec.layers):
        height, width, _ = dims[index]
        if layer.kind is LayerKind.CONV:
            areas.append([height * width])
        elif layer.kind is LayerKind.MAXPOOL and areas:
            areas[-1].append(height * width)
    return areas


def extra_parameter_count(spec: NetworkSpec) -> int:
    """Trainable non-filter parameters: biases and batchnorm scale and shift."""
    return sum(
        shape[0]
        for key, shape in expected_shapes(spec).items()
        if key.endswith((".bias", ".gamma", ".beta"))
    )


def layout_report(
    layout: MaskLayout,
    counts: Sequence[int],
    output_dims: Sequence[Tuple[int, int]],
    areas: Optional[Sequence[Sequence[int]]] = None,
    names: Optional[Sequence[str]] = None,
) -> CompressionReport:
    """Report for a bare layout and surviving counts [N_0, N^_1 ... N_p]."""
    if areas is None:
        areas = [[h * w] for h, w in output_dims]
    names = list(names) if names else [f"conv{i}" for i in range(1, layout.depth + 1)]
    new_shapes = compressed_shapes(layout, counts)
    layers = []
    for i, (old, new) in enumerate(zip(layout.shapes, new_shapes), start=1):
        height, width = output_dims[i - 1]
        r_c, r_s, r_f = layer_ratios(layout, counts, output_dims, i)
        area = sum(areas[i - 1])
        layers.append(
            LayerStats(
                index=i,
                name=names[i - 1],
                original=old,
                compressed=new,
                output_height=height,
                output_width=width,
                original_weights=old.weights,
                compressed_weights=new.weights,
                original_mults=old.weights * height * width,
                compressed_mults=new.weights * height * width,
                original_fmap=old.filters * area,
                compressed_fmap=new.filters * area,
                r_c=r_c,
                r_s=r_s,
                r_f=r_f,
            )
        )
    return CompressionReport(tuple(layers), counts=tuple(int(c) for c in counts))


def overall_report(
    net: TrainedNetwork,
    ind: Individual,
    accuracies: Optional[Tuple[float, float]] = None,
) -> CompressionReport:
    """Whole-network report; `accuracies` are (before, after) top-1 accuracies."""
    spec = net.spec
    layout = MaskLayout.from_spec(spec)
    if ind.layout != layout:
        raise ValueError("individual layout does not match the network")
    counts = surviving_counts(ind)
    report = layout_report(
        layout,
        counts,
        spec.conv_output_dims(),
        fmap_areas(spec),
        [layer.name or f"conv{i}" for i, layer in enumerate(spec.conv_layers, 1)],
    )
    compact_spec = spec.with_filter_counts(counts[1:])
    report = replace(
        report,
        original_extra_params=extra_parameter_count(spec),
        compressed_extra_params=extra_parameter_count(compact_spec),
    )
    if accuracies is not None:
        report = replace(
            report, error_before=1 - accuracies[0], error_after=1 - accuracies[1]
        )
    logger.info(
        f"Compression ratios: r_c {report.r_c:.2f}, r_s {report.r_s:.2f}, "
        f"r_f {report.r_f:.2f}"
    )
    return report


def report_frame(report: CompressionReport) -> pd.DataFrame:
    rows = [
        {
            "Layer": layer.name,
            "Original": layer.original.describe(),
            "Memory": f"{megabytes(layer.original_weights):.3f} MB",
            "New": layer.compressed.describe(),
            "New memory": f"{megabytes(layer.compressed_weights):.3f} MB",
            "r_c": f"{layer.r_c:.2f}",
        }
        for layer in report.layers
    ]
    rows.append(
        {
            "Layer": "Total",
            "Original": str(report.original_weights),
            "Memory": f"{report.original_memory_mb:.3f} MB",
            "New": str(report.compressed_weights),
            "New memory": f"{report.compressed_memory_mb:.3f} MB",
            "r_c": f"{report.r_c:.2f}",
        }
    )
    return pd.DataFrame(rows)


def emit_table(report: CompressionReport) -> str:
    """Aligned per-layer table with a totals row and summary lines."""
    lines = [report_frame(report).to_string(index=False)]
    lines.append(
        f"r_c = {report.r_c:.2f}, r_s = {report.r_s:.2f}, r_f = {report.r_f:.2f}; "
        f"feature maps {report.original_fmap_mb:.3f} MB -> "
        f"{report.compressed_fmap_mb:.3f} MB"
    )
    if report.original_extra_params:
        lines.append(
            f"Bias and batchnorm parameters (not in the table): "
            f"{report.original_extra_params} -> {report.compressed_extra_params}"
        )
    if report.error_before is not None and report.error_after is not None:
        lines.append(
            f"Accuracy {1 - report.error_before:.2%} -> {1 - report.error_after:.2%}"
        )
    return "\n".join(lines) + "\n"


def report_records(report: CompressionReport) -> List[Dict[str, Any]]:
    """One record per layer plus a totals record, for line-delimited export."""
    records: List[Dict[str, Any]] = []
    for layer in report.layers:
        record = asdict(layer)
        record["original"] = layer.original.describe()
        record["compressed"] = layer.compressed.describe()
        records.append(record)
    records.append(
        {
            "name": "total",
            "original_weights": report.original_weights,
            "compressed_weights": report.compressed_weights,
            "r_c": report.r_c,
            "r_s": report.r_s,
            "r_f": report.r_f,
            "original_memory_mb": report.original_memory_mb,
            "compressed_memory_mb": report.compressed_memory_mb,
            "error_before": report.error_before,
            "error_after": report.error_after,
            "counts": list(report.counts),
        }
    )
    return records


@dataclass(frozen=True)
class TableLayout:
    """A layout that is only reported on, never run."""

    layout: MaskLayout
    output_dims: Tuple[Tuple[int, int], ...]
    areas: Tuple[Tuple[int, ...], ...]
    names: Tuple[str, ...]

    def report(self, counts: Sequence[int]) -> CompressionReport:
        return layout_report(
            self.layout, counts, self.output_dims, self.areas, self.names
        )


def alexnet_layout() -> TableLayout:
    """AlexNet with its grouped conv2/conv4/conv5 and the fc layers as 1x1 convs."""
    shapes = (
        FilterShape(11, 11, 3, 96),
        FilterShape(5, 5, 48, 256),
        FilterShape(3, 3, 256, 384),
        FilterShape(3, 3, 192, 384),
        FilterShape(3, 3, 192, 256),
        FilterShape(6, 6, 256, 4096),
        FilterShape(1, 1, 4096, 4096),
        FilterShape(1, 1, 4096, 1000),
    )
    output_dims = (
        (55, 55), (27, 27), (13, 13), (13, 13), (13, 13), (1, 1), (1, 1), (1, 1)
    )
    areas = ((3025, 729), (729, 169), (169,), (169,), (169, 36), (1,), (1,), (1,))
    names = ("conv1", "conv2", "conv3", "conv4", "conv5", "fc6", "fc7", "fc8")
    return TableLayout(MaskLayout(shapes, 3), output_dims, areas, names)
