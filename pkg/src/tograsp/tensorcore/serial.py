"""Binary weight files.

Layout: 4-byte magic, u32 little-endian manifest length, UTF-8 JSON
manifest (graph structure plus ordered parameter records), then raw
float32 parameter blocks in manifest order. Parameters live on the
float32 grid in memory, so save followed by load reproduces network
outputs bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .engine import LayerSpec, Network

WEIGHT_MAGIC = b"TGT1"


class CorruptWeights(ValueError):
    """Weight file is truncated or not in the expected format."""


def save_network(net, path):
    records = []
    blobs = []
    for key in sorted(net.params):
        arr = net.params[key]
        records.append({"key": key, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f4").tobytes())
    manifest = {
        "specs": [s.to_dict() for s in net.specs],
        "input_shapes": {k: list(v) for k, v in net.input_shapes.items()},
        "outputs": list(net.outputs),
        "seed": net.seed,
        "params": records,
    }
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_network(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:4] != WEIGHT_MAGIC:
        raise CorruptWeights(f"{path}: bad magic")
    (mlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + mlen:
        raise CorruptWeights(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptWeights(f"{path}: unreadable manifest") from e
    net = Network(
        [LayerSpec.from_dict(d) for d in manifest["specs"]],
        {k: tuple(v) for k, v in manifest["input_shapes"].items()},
        manifest["outputs"],
        seed=manifest["seed"],
    )
    off = 8 + mlen
    for rec in manifest["params"]:
        key, shape = rec["key"], tuple(rec["shape"])
        if key not in net.params or net.params[key].shape != shape:
            raise CorruptWeights(f"{path}: unexpected parameter {key!r} {shape}")
        nbytes = 4 * int(np.prod(shape)) if shape else 4
        block = data[off : off + nbytes]
        if len(block) != nbytes:
            raise CorruptWeights(f"{path}: truncated block for {key!r}")
        net.params[key] = np.frombuffer(block, dtype="<f4").reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(data):
        raise CorruptWeights(f"{path}: {len(data) - off} trailing bytes")
    return net
