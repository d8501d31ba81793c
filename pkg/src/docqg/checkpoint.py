"""Single-file model checkpoints.

Layout: 4-byte magic, 8-byte little-endian header length, a JSON header
(format version, config snapshot, vocab, array directory with name/shape/
dtype/offset), then the raw little-endian arrays in directory order.
The header is self-describing and diffable; loads are all-or-nothing.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .corpus import EmbeddingTable, Vocab
from .model import ModelConfig, ParamSet, QGModel

MAGIC = b"DQGC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save(model, path, optimizer_state=None):
    directory = []
    blobs = []
    offset = 0
    named = list(model.params.arrays.items()) + [("emb", model.embeddings.matrix)]
    for name, arr in named:
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        blob = arr.astype(dtype, copy=False).tobytes()
        directory.append({"name": name, "shape": list(arr.shape),
                          "dtype": dtype.str, "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": model.vocab.tokens,
        "vocab_hash": model.vocab.content_hash(),
        "embeddings_frozen": model.embeddings.frozen,
        "directory": directory,
    }
    if optimizer_state is not None:
        header["optimizer"] = optimizer_state
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (head_len,) = struct.unpack("<Q", data[4:12])
    try:
        header = json.loads(data[12:12 + head_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"!= supported {FORMAT_VERSION}")
    body = data[12 + head_len:]

    config = ModelConfig(**header["config"])
    vocab = Vocab(list(header["vocab"]))
    if vocab.content_hash() != header["vocab_hash"]:
        raise CheckpointError(f"{path}: vocab hash mismatch (corrupt file)")

    arrays = {}
    for entry in header["directory"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        chunk = body[entry["offset"]:entry["offset"] + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
    if "emb" not in arrays:
        raise CheckpointError(f"{path}: missing embedding table")

    params = ParamSet()
    for entry in header["directory"]:
        if entry["name"] != "emb":
            params.add(entry["name"], arrays[entry["name"]])
    emb = EmbeddingTable(arrays["emb"], frozen=header["embeddings_frozen"])
    return QGModel(config, vocab, emb, params)
