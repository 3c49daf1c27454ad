"""
Checkpoint files for networks, individuals and evolution logs.

Layout of a checkpoint file:

    ECS-CHECKPOINT <version>\\n
    <one-line JSON header: kind, payload size, kind-specific fields>\\n
    <payload bytes>
    <sha256 hex digest of everything above>\\n

Network payloads are the parameters in manifest order as little-endian
float32; individual and log payloads are UTF-8 text.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import torch

from model.compression.evolution import EvolutionLog
from model.compression.genome import Individual, MaskLayout
from model.core.network import TrainedNetwork
from model.core.spec import NetworkSpec

logger = logging.getLogger(__name__)

MAGIC = b"ECS-CHECKPOINT"
FORMAT_VERSION = 1
DIGEST_LENGTH = 64
PAYLOAD_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]
Checkpointable = Union[TrainedNetwork, Individual, EvolutionLog]


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be read back faithfully."""

    def __init__(self, message: str, path: PathLike):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def _network_payload(net: TrainedNetwork) -> Tuple[Dict[str, Any], bytes]:
    manifest = []
    chunks = []
    for key, tensor in net.parameters.items():
        values = tensor.detach().cpu().numpy().astype(PAYLOAD_DTYPE)
        manifest.append({"key": key, "shape": list(values.shape)})
        chunks.append(values.tobytes())
    header = {"spec": net.spec.to_dict(), "manifest": manifest}
    return header, b"".join(chunks)


def _encode(obj: Checkpointable) -> Tuple[Dict[str, Any], bytes]:
    if isinstance(obj, TrainedNetwork):
        header, payload = _network_payload(obj)
        header["kind"] = "network"
    elif isinstance(obj, Individual):
        header = {"kind": "individual", "layout": obj.layout.to_dict()}
        payload = obj.to_text().encode("utf-8")
    elif isinstance(obj, EvolutionLog):
        header = {"kind": "log", "generations": len(obj)}
        payload = obj.to_jsonl().encode("utf-8")
    else:
        raise TypeError(f"Cannot checkpoint object of type {type(obj).__name__}")
    header["payload_bytes"] = len(payload)
    return header, payload


def save_checkpoint(obj: Checkpointable, path: PathLike) -> Path:
    """Write a network, individual or evolution log; returns the path written."""
    header, payload = _encode(obj)
    body = (
        MAGIC
        + f" {FORMAT_VERSION}\n".encode("ascii")
        + json.dumps(header, sort_keys=True).encode("utf-8")
        + b"\n"
        + payload
    )
    digest = hashlib.sha256(body).hexdigest().encode("ascii")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(body + digest + b"\n")
    logger.info(f"Saved {header['kind']} checkpoint to {target}")
    return target


def _split(raw: bytes, path: PathLike) -> Tuple[Dict[str, Any], bytes]:
    if len(raw) < DIGEST_LENGTH + 1 or not raw.endswith(b"\n"):
        raise CheckpointError("file is truncated", path)
    body, digest = raw[: -(DIGEST_LENGTH + 1)], raw[-(DIGEST_LENGTH + 1) : -1]
    if hashlib.sha256(body).hexdigest().encode("ascii") != digest:
        raise CheckpointError("checksum mismatch", path)

    first, _, rest = body.partition(b"\n")
    parts = first.split(b" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError("not a checkpoint file", path)
    if parts[1] != str(FORMAT_VERSION).encode("ascii"):
        raise CheckpointError(
            f"unsupported format version {parts[1].decode(errors='replace')}", path
        )
    header_line, _, payload = rest.partition(b"\n")
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable header ({e})", path) from e
    if header.get("payload_bytes") != len(payload):
        raise CheckpointError(
            f"payload has {len(payload)} bytes, header says "
            f"{header.get('payload_bytes')}",
            path,
        )
    return header, payload


def _decode_network(
    header: Dict[str, Any], payload: bytes, path: PathLike
) -> TrainedNetwork:
    spec = NetworkSpec.from_dict(header["spec"])
    parameters = {}
    offset = 0
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        size = count * PAYLOAD_DTYPE.itemsize
        if offset + size > len(payload):
            raise CheckpointError(f"payload ends inside {entry['key']}", path)
        values = np.frombuffer(payload, PAYLOAD_DTYPE, count=count, offset=offset)
        parameters[entry["key"]] = torch.from_numpy(
            values.astype(np.float32).reshape(shape)
        )
        offset += size
    if offset != len(payload):
        raise CheckpointError("payload is longer than its manifest", path)
    net = TrainedNetwork(spec, parameters)
    net.validate()
    return net


def load_checkpoint(path: PathLike) -> Checkpointable:
    """Read back whatever `save_checkpoint` wrote to `path`."""
    header, payload = _split(Path(path).read_bytes(), path)
    kind = header.get("kind")
    if kind == "network":
        return _decode_network(header, payload, path)
    if kind == "individual":
        layout = MaskLayout.from_dict(header["layout"])
        return Individual.from_text(payload.decode("utf-8"), layout)
    if kind == "log":
        return EvolutionLog.from_jsonl(payload.decode("utf-8"))
    raise CheckpointError(f"unknown checkpoint kind {kind!r}", path)


def load_network(path: PathLike) -> TrainedNetwork:
    obj = load_checkpoint(path)
    if not isinstance(obj, TrainedNetwork):
        raise CheckpointError("checkpoint does not hold a network", path)
    return obj


def load_individual(path: PathLike) -> Individual:
    obj = load_checkpoint(path)
    if not isinstance(obj, Individual):
        raise CheckpointError("checkpoint does not hold an individual", path)
    return obj
