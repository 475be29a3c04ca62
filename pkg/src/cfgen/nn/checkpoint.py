"""Flat binary checkpoints: JSON header, then float64 little-endian parameters.

Layout: magic ``MLPCKPT1``, uint32 header length, UTF-8 JSON header with the
spec (widths, activations, dropout), then each parameter's raw bytes in layer
order (W then b per layer). Shapes are derived from the widths, so the data
section carries no framing.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .layers import MlpSpec, Tensor

_MAGIC = b"MLPCKPT1"


def save_mlp(path: str | Path, spec: MlpSpec, params: list[Tensor]) -> None:
    header = json.dumps({
        "widths": list(spec.widths),
        "activations": list(spec.activations),
        "dropout": list(spec.dropout),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_mlp(path: str | Path) -> tuple[MlpSpec, list[Tensor]]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ParseError(f"{path}: not an MLP checkpoint")
    hlen = int(np.frombuffer(raw[8:12], dtype=np.uint32)[0])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    spec = MlpSpec(widths=tuple(header["widths"]),
                   activations=tuple(header["activations"]),
                   dropout=tuple(header["dropout"]))
    params: list[Tensor] = []
    off = 12 + hlen
    for i in range(spec.n_layers):
        for shape in ((spec.widths[i], spec.widths[i + 1]), (spec.widths[i + 1],)):
            n = int(np.prod(shape))
            chunk = np.frombuffer(raw[off:off + 8 * n], dtype="<f8")
            if chunk.size != n:
                raise ParseError(f"{path}: truncated parameter data")
            params.append(Tensor(chunk.reshape(shape).astype(np.float64)))
            off += 8 * n
    return spec, params


def params_hash(params: list[Tensor]) -> str:
    """SHA-256 over the concatenated little-endian parameter bytes."""
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()
