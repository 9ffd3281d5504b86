"""Byte-deterministic model checkpoints.

Layout: the magic line, an 8-byte little-endian header length, a JSON header
with sorted keys, then the raw tensor blobs (little-endian, row-major) in the
header's order, which is the sorted state-dict key order. Two training runs
with the same seed therefore produce bit-identical files, which the repeatable
run check relies on; for the same reason nothing time- or host-dependent may
ever enter the metadata.

The header records the network's constructor arguments (its descriptor) plus a
hash of their canonical JSON encoding; loading rebuilds the network from the
descriptor and refuses files whose hash does not match, so weights can never be
silently loaded into the wrong architecture.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .anatomy import AnatomyNet
from .dae import DenoisingAutoencoder
from .errors import DataFormatError
from .pathology import PathologyNet, SingleBranchNet
from .trainer import TrainLog

MAGIC = b"MYOSEGCKPT1\n"
CHECKPOINT_FORMAT_VERSION = "1"

_CLASSES = {
    "DenoisingAutoencoder": DenoisingAutoencoder,
    "AnatomyNet": AnatomyNet,
    "PathologyNet": PathologyNet,
    "SingleBranchNet": SingleBranchNet,
}

_TORCH_TO_NP = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_NP_TO_TORCH = {v: k for k, v in _TORCH_TO_NP.items()}


def arch_hash(descriptor: dict) -> str:
    canonical = json.dumps(descriptor, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def train_metadata(log: TrainLog) -> dict:
    """Checkpoint metadata from a training log; wall time is deliberately dropped."""
    return {
        "trained": log.kind,
        "seed": log.seed,
        "epochs": log.epochs,
        "loss_history": [float(v) for v in log.loss_history],
    }


def checkpoint_bytes(net: torch.nn.Module, kind: str, metadata: dict | None = None) -> bytes:
    """The exact byte content a checkpoint of ``net`` would have on disk."""
    descriptor = net.descriptor()
    state = net.state_dict()
    names = sorted(state.keys())
    tensors = []
    for name in names:
        t = state[name]
        if t.dtype not in _TORCH_TO_NP:
            raise DataFormatError(f"unsupported tensor dtype {t.dtype} for {name}")
        tensors.append({
            "name": name,
            "shape": list(t.shape),
            "dtype": _TORCH_TO_NP[t.dtype],
        })
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "descriptor": descriptor,
        "arch_hash": arch_hash(descriptor),
        "metadata": metadata or {},
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<Q", len(blob)), blob]
    for name in names:
        arr = state[name].detach().cpu().numpy()
        parts.append(np.ascontiguousarray(arr).astype(_TORCH_TO_NP[state[name].dtype]).tobytes())
    return b"".join(parts)


def weights_hash(net: torch.nn.Module, kind: str) -> str:
    """Short content hash identifying a trained network (descriptor + weights)."""
    return hashlib.sha256(checkpoint_bytes(net, kind)).hexdigest()[:16]


def save_checkpoint(path, net: torch.nn.Module, kind: str, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(net, kind, metadata))
    return path


def _read_header(path) -> tuple[dict, int]:
    """Parse the header; returns it with the byte offset of the first blob."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataFormatError(f"{path} is not a checkpoint (bad magic)")
        (length,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(length).decode())
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataFormatError(f"{path}: unparseable checkpoint header: {e}") from e
    return header, len(MAGIC) + 8 + length


def read_header(path) -> dict:
    return _read_header(path)[0]


def load_checkpoint(path, expected_kind: str | None = None) -> tuple[torch.nn.Module, dict]:
    """Rebuild the network stored at ``path`` and load its weights.

    Returns ``(net, header)``; the network is in eval mode. ``expected_kind``
    guards call sites that need a specific stage's checkpoint.
    """
    header, offset = _read_header(path)
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: checkpoint format {header.get('format_version')!r} != "
            f"{CHECKPOINT_FORMAT_VERSION!r}"
        )
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise DataFormatError(
            f"{path}: checkpoint kind {header.get('kind')!r}, expected {expected_kind!r}"
        )
    descriptor = header["descriptor"]
    if header.get("arch_hash") != arch_hash(descriptor):
        raise DataFormatError(f"{path}: architecture hash mismatch; refusing to load")
    cls_name = descriptor.get("class")
    if cls_name not in _CLASSES:
        raise DataFormatError(f"{path}: unknown network class {cls_name!r}")
    net = _CLASSES[cls_name].from_descriptor(descriptor)

    state = {}
    with open(path, "rb") as fh:
        fh.seek(offset)
        for entry in header["tensors"]:
            dtype = entry["dtype"]
            if dtype not in _NP_TO_TORCH:
                raise DataFormatError(f"{path}: unsupported dtype {dtype!r}")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * np.dtype(dtype).itemsize)
            if len(raw) != count * np.dtype(dtype).itemsize:
                raise DataFormatError(f"{path}: truncated blob for {entry['name']}")
            arr = np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(entry["shape"]).copy()
            state[entry["name"]] = torch.from_numpy(arr)
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after the last tensor")

    missing = set(net.state_dict()) - set(state)
    extra = set(state) - set(net.state_dict())
    if missing or extra:
        raise DataFormatError(
            f"{path}: state mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
        )
    net.load_state_dict(state)
    net.eval()
    return net, header
