"""Binary model checkpoints; round-trips are bitwise lossless.

Byte layout (all integers little-endian):

    offset  size  field
    0       4     magic b"CLPK"
    4       4     u32 format version (currently 1)
    8       4     u32 kind tag length L
    12      L     ascii kind tag: "mlp" or "vae"
    ..      4     u32 header int count H
    ..      8*H   i64 header ints
                    mlp: input_dim, num_classes, n_hidden, hidden widths...
                    vae: input_dim, latent_dim, hidden
    ..      8     u64 parameter count P
    ..      8*P   f64 flat parameters, ParamSet order, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .models import MlpClassifier, Vae

MAGIC = b"CLPK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _header_ints(model) -> tuple[str, list[int]]:
    if isinstance(model, MlpClassifier):
        return "mlp", [model.input_dim, model.num_classes, len(model.hidden), *model.hidden]
    if isinstance(model, Vae):
        return "vae", [model.input_dim, model.latent_dim, model.hidden]
    raise CheckpointError(f"cannot checkpoint object of type {type(model).__name__}")


def dump_bytes(model) -> bytes:
    kind, ints = _header_ints(model)
    flat = model.params.flatten()
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<I", len(kind)),
        kind.encode("ascii"),
        struct.pack("<I", len(ints)),
        struct.pack(f"<{len(ints)}q", *ints),
        struct.pack("<Q", flat.size),
        flat.astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def load_bytes(blob: bytes):
    if blob[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    pos = 4
    (version,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (klen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    kind = blob[pos:pos + klen].decode("ascii")
    pos += klen
    (hlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    ints = list(struct.unpack_from(f"<{hlen}q", blob, pos))
    pos += 8 * hlen
    (pcount,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if len(blob) - pos < 8 * pcount:
        raise CheckpointError("truncated parameter payload")
    flat = np.frombuffer(blob, dtype="<f8", count=pcount, offset=pos).astype(np.float64)

    if kind == "mlp":
        input_dim, num_classes, n_hidden = ints[0], ints[1], ints[2]
        hidden = tuple(ints[3:3 + n_hidden])
        model = MlpClassifier(input_dim, num_classes, hidden)
    elif kind == "vae":
        model = Vae(*ints)
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    if model.params.size != pcount:
        raise CheckpointError(
            f"parameter count {pcount} does not match header geometry ({model.params.size})"
        )
    model.params = model.params.unflatten(flat)
    return model


def save(model, path: str | Path) -> None:
    Path(path).write_bytes(dump_bytes(model))


def load(path: str | Path):
    return load_bytes(Path(path).read_bytes())
