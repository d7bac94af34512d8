"""Checkpoint container.

Layout::

    b"ISNNCKPT"                      8-byte magic
    uint32 little-endian             header length in bytes
    header                           UTF-8 JSON: version, kind, tensor table,
                                     config echo, metrics snapshot
    payload                          tensors back to back, little-endian

Tensor table entries carry ``name``, ``shape``, ``dtype`` (``<f4`` for network
parameters, ``<f8`` for analog front-end quantities), ``offset`` and ``nbytes``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import FormatError

MAGIC = b"ISNNCKPT"
FORMAT_VERSION = 1
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    tensors: dict
    kind: str = "network"  # network | in_sensor
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def to_bytes(ck: Checkpoint) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(ck.tensors):
        arr = np.asarray(ck.tensors[name])
        dt = "<f8" if arr.dtype == np.float64 else "<f4"
        blob = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": dt,
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"format_version": ck.version, "kind": ck.kind, "tensors": table,
                         "config": ck.config, "metrics": ck.metrics},
                        sort_keys=True, indent=1).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)


def from_bytes(raw: bytes, source: str = "checkpoint") -> Checkpoint:
    if raw[:8] != MAGIC:
        raise FormatError(f"{source}: bad magic at byte offset 0")
    if len(raw) < 12:
        raise FormatError(f"{source}: truncated header length at byte offset {len(raw)}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise FormatError(f"{source}: truncated header at byte offset {len(raw)}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: unreadable header at byte offset 12: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported format version {header.get('format_version')}")
    base = 12 + hlen
    tensors = {}
    for entry in header["tensors"]:
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise FormatError(f"{source}: tensor {entry['name']} has unknown dtype {entry['dtype']}")
        start = base + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise FormatError(f"{source}: tensor {entry['name']} truncated at byte offset {len(raw)}")
        arr = np.frombuffer(raw[start:end], dtype=dt)
        if arr.size != int(np.prod(entry["shape"])):
            raise FormatError(f"{source}: tensor {entry['name']} size/shape mismatch at byte offset {start}")
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))
    return Checkpoint(tensors, header["kind"], header.get("config", {}), header.get("metrics", {}),
                      header["format_version"])


def save(path, ck: Checkpoint):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(to_bytes(ck))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), str(path))


# ------------------------------------------------------------- network glue

def _frontend_meta(fe) -> dict:
    return {"v_th": fe.v_th, "curve": fe.curve.to_dict(), "stride": fe.stride,
            "padding": fe.padding, "pool_window": fe.pool_window,
            "voltage_scale": fe.voltage_scale, "weight_ref": fe.weight_ref,
            "noise_sigma": fe.noise_sigma, "quant_bits": fe.quant_bits}


def from_network(net, metrics: dict | None = None) -> Checkpoint:
    from .snn import InSensorBlock

    tensors = {k: np.asarray(v) for k, v in net.state_dict().items()}
    config = {"network": net.cfg.to_dict()}
    kind = "network"
    first = net.blocks[0]
    if isinstance(first, InSensorBlock):
        fe = first.frontend
        tensors["frontend.positive"] = np.asarray(fe.banks.positive, dtype=np.float64)
        tensors["frontend.negative"] = np.asarray(fe.banks.negative, dtype=np.float64)
        tensors["frontend.trip_points"] = np.asarray(fe.trip_points, dtype=np.float64)
        config["frontend"] = _frontend_meta(fe)
        kind = "in_sensor"
    return Checkpoint(tensors, kind, config, metrics or {})


def to_network(ck: Checkpoint, cfg=None):
    """Rebuild a network from a checkpoint.

    ``cfg`` (a NetworkConfig) overrides the echoed config; tensor shapes must match.
    """
    from . import analog_frontend as af
    from .numerics import DimensionError
    from .snn import InSensorBlock, NetworkConfig, build_network

    echo = NetworkConfig.from_dict(ck.config["network"])
    cfg = echo if cfg is None else cfg
    if ck.kind == "in_sensor":
        cfg = NetworkConfig.from_dict({**cfg.to_dict(), "first_layer_mode": "digital"})
    net = build_network(cfg, 0)
    state = {k: v for k, v in ck.tensors.items() if not k.startswith("frontend.")}
    if ck.kind == "in_sensor":
        # the digital first block is a placeholder that the front-end replaces
        shell = net.blocks[0].params() + net.blocks[0].buffers()
        state.update({t.name: t.data for t in shell})
    net.load_state_dict(state)
    if ck.kind == "in_sensor":
        meta = dict(ck.config["frontend"])
        meta["curve"] = af.CurveModel.from_dict(meta["curve"])
        banks = af.WeightBanks(ck.tensors["frontend.positive"], ck.tensors["frontend.negative"])
        fe = af.FusedFrontend(banks, ck.tensors["frontend.trip_points"], **meta)
        c_in = cfg.input_shape[0]
        if banks.positive.shape[1] != c_in:
            raise DimensionError(f"front-end expects {banks.positive.shape[1]} input channels, config has {c_in}")
        if banks.positive.shape[0] != cfg.layers[0].channels:
            raise DimensionError(
                f"front-end has {banks.positive.shape[0]} channels, config layer 0 has {cfg.layers[0].channels}")
        net.blocks[0] = InSensorBlock(fe, seed=cfg.frontend.noise_seed)
        net.cfg = NetworkConfig.from_dict({**cfg.to_dict(), "first_layer_mode": "in_sensor"})
    return net
