"""Model checkpoint container.

Layout (all integers little-endian)::

    b"MACD1\\n"                     6-byte magic, format version 1
    uint64 header_len
    header_len bytes                UTF-8 JSON header (sorted keys)
    payload                         raw float64 ("<f8") arrays, C order

The header holds ``config``, ``gene_order``, ``type_order``,
``loss_history``, ``metadata``, ``bn`` ({eps, momentum}) and ``arrays``: a
list of {name, kind ("param" | "buffer"), shape, dtype, offset, nbytes}
with offsets relative to the payload start.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ValidationError
from .model import MacdConfig, MacdParams, TrainedModel

MAGIC = b"MACD1\n"
FORMAT_VERSION = 1


class CheckpointError(ValidationError):
    pass


def save_checkpoint(model: TrainedModel, path) -> None:
    entries, blobs, offset = [], [], 0
    sources = [("param", model.params.arrays), ("buffer", model.params.buffers)]
    for kind, store in sources:
        for name in sorted(store):
            arr = np.ascontiguousarray(store[name], dtype="<f8")
            entries.append(
                {"name": name, "kind": kind, "shape": list(arr.shape), "dtype": "<f8",
                 "offset": offset, "nbytes": arr.nbytes}
            )
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "gene_order": list(model.gene_order),
        "type_order": list(model.type_order),
        "loss_history": [list(r) for r in model.loss_history],
        "metadata": model.metadata,
        "bn": {"eps": model.params.bn_eps, "momentum": model.params.bn_momentum},
        "arrays": entries,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a MACD1 checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = memoryview(data)[pos + hlen :]
    arrays, buffers = {}, {}
    for e in header["arrays"]:
        if e["dtype"] != "<f8" or e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"{path}: bad array entry {e['name']!r}")
        arr = np.frombuffer(payload[e["offset"] : e["offset"] + e["nbytes"]], dtype="<f8")
        arr = arr.reshape(e["shape"]).astype(np.float64)
        (arrays if e["kind"] == "param" else buffers)[e["name"]] = arr
    cfg = MacdConfig.from_dict(header["config"])
    params = MacdParams(arrays, buffers, header["bn"]["eps"], header["bn"]["momentum"])
    model = TrainedModel(
        params, cfg, header["gene_order"], header["type_order"],
        [tuple(r) for r in header["loss_history"]], header.get("metadata", {}),
    )
    _check_shapes(model, path)
    return model


def _check_shapes(model: TrainedModel, path):
    a = model.params.arrays
    try:
        n_in = a["encoder.fc0.W"].shape[0]
        n_out = a["predictor.fc1.W"].shape[1]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing parameter {exc}") from None
    if n_in != len(model.gene_order) or n_out != len(model.type_order):
        raise CheckpointError(f"{path}: parameter shapes disagree with gene/type lists")
