"""Binary model checkpoints.

Layout (little-endian)::

    b"SNTG"              magic
    uint16               format version
    uint8                topology (0 classifier, 1 unet)
    uint32               length of the JSON header that follows
    bytes                JSON: {"input_shape": [...], "layers": [layer specs]}
    float64[...]         parameters in declaration order
"""
import json
import struct

import numpy as np

from .layers import layer_from_spec
from .network import TOPOLOGIES, Network

MAGIC = b"SNTG"
VERSION = 1


class CheckpointError(Exception):
    pass


def to_bytes(net: Network) -> bytes:
    header = json.dumps({"input_shape": list(net.input_shape),
                         "layers": [l.spec() for l in net.layers]},
                        sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<HBI", VERSION, TOPOLOGIES.index(net.topology), len(header)), header]
    for _, _, value, _ in net.parameters():
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> Network:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(data) < 4 + struct.calcsize("<HBI"):
        raise CheckpointError("checkpoint truncated")
    version, topo, hlen = struct.unpack_from("<HBI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 4 + struct.calcsize("<HBI")
    header = json.loads(data[off:off + hlen])
    off += hlen
    layers = [layer_from_spec(s) for s in header["layers"]]
    net = Network(layers, TOPOLOGIES[topo], header["input_shape"])
    for _, _, value, _ in net.parameters():
        n = value.size
        if off + 8 * n > len(data):
            raise CheckpointError("checkpoint truncated")
        chunk = np.frombuffer(data, dtype="<f8", count=n, offset=off)
        value[...] = chunk.reshape(value.shape)
        off += 8 * n
    if off != len(data):
        raise CheckpointError("trailing bytes after parameters")
    return net


def save(net: Network, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load(path) -> Network:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
