"""The .nnx weight-file format.

Byte layout (version "nnx-1"):

  line 1   UTF-8 JSON header terminated by b"\\n". Canonical encoding
           (sorted keys, no whitespace). Required keys: "format" = "nnx-1",
           "dims" = [d0, ..., d_out]. Optional keys (seed, provenance, ...)
           are preserved verbatim across load/save.
  payload  one record per layer i = 1..r+1, concatenated in order:
             weights  d_i * d_{i-1} little-endian float64, row-major
             biases   d_i          little-endian float64

Signature-injection files ("nnx-sig-1") reuse the same encoding with one
record per hidden layer of shape d_i x (d_{i-1} + 1): each row is the
neuron's ratio vector with its bias appended, both known only up to a
shared signed scale.
"""
from __future__ import annotations

import json

import numpy as np

from .network import Architecture, Network

FORMAT_NET = "nnx-1"
FORMAT_SIG = "nnx-sig-1"
_DTYPE = np.dtype("<f8")


def _encode_header(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def _read_header(blob, path):
    nl = blob.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing header line")
    header = json.loads(blob[:nl].decode("utf-8"))
    return header, blob[nl + 1:]


def save_network(net: Network, path):
    header = {"format": FORMAT_NET, "dims": list(net.arch.dims)}
    for k, v in net.meta.items():
        if k not in header:
            header[k] = v
    chunks = [_encode_header(header)]
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype=_DTYPE).tobytes())
        chunks.append(np.ascontiguousarray(b, dtype=_DTYPE).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _read_header(blob, path)
    if header.get("format") != FORMAT_NET:
        raise ValueError(f"{path}: format {header.get('format')!r}, expected {FORMAT_NET!r}")
    dims = Architecture(tuple(header["dims"])).dims
    weights, biases = [], []
    off = 0
    for i in range(1, len(dims)):
        n_w = dims[i] * dims[i - 1]
        w = np.frombuffer(payload, dtype=_DTYPE, count=n_w, offset=off).reshape(dims[i], dims[i - 1])
        off += n_w * 8
        b = np.frombuffer(payload, dtype=_DTYPE, count=dims[i], offset=off)
        off += dims[i] * 8
        weights.append(w)
        biases.append(b)
    if off != len(payload):
        raise ValueError(f"{path}: {len(payload) - off} trailing bytes")
    meta = {k: v for k, v in header.items() if k not in ("format", "dims")}
    return Network(weights, biases, meta=meta)


def save_signatures(rows_with_bias, path, meta=None):
    """rows_with_bias: list over hidden layers of (d_i, d_{i-1}+1) arrays."""
    mats = [np.ascontiguousarray(m, dtype=_DTYPE) for m in rows_with_bias]
    dims = [mats[0].shape[1] - 1] + [m.shape[0] for m in mats]
    for i, m in enumerate(mats):
        if m.shape[1] != dims[i] + 1:
            raise ValueError(f"layer {i + 1}: expected {dims[i] + 1} columns, got {m.shape[1]}")
    header = {"format": FORMAT_SIG, "dims": dims}
    if meta:
        header.update({k: v for k, v in meta.items() if k not in header})
    with open(path, "wb") as fh:
        fh.write(_encode_header(header))
        for m in mats:
            fh.write(m.tobytes())


def load_signatures(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _read_header(blob, path)
    if header.get("format") != FORMAT_SIG:
        raise ValueError(f"{path}: format {header.get('format')!r}, expected {FORMAT_SIG!r}")
    dims = [int(d) for d in header["dims"]]
    mats = []
    off = 0
    for i in range(1, len(dims)):
        n = dims[i] * (dims[i - 1] + 1)
        m = np.frombuffer(payload, dtype=_DTYPE, count=n, offset=off).reshape(dims[i], dims[i - 1] + 1)
        off += n * 8
        mats.append(m)
    if off != len(payload):
        raise ValueError(f"{path}: {len(payload) - off} trailing bytes")
    return mats
