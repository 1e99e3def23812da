"""Weight file format shared by Token Shuffle and TAPE parameters.

Layout (all integers little-endian)::

    magic        4 bytes   b"TSWF"
    version      uint32    1
    header_len   uint32    byte length of the JSON header
    header       UTF-8 JSON {"kind": ..., "meta": {...},
                             "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    padding      zero bytes up to the next multiple of 8
    payload      float64 little-endian, tensors concatenated in header order,
                 each flattened row-major

``meta`` carries what is needed to rebuild the object: ``m`` for a shuffle
projector, the TAPE config fields and ``frozen`` flag for an adapter.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .tape import TapeConfig, TapeParams
from .token_shuffle import ShuffleParams

MAGIC = b"TSWF"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def dump_tensors(kind: str, meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    header = {
        "kind": kind,
        "meta": meta,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    prefix = MAGIC + struct.pack("<II", VERSION, len(raw)) + raw
    prefix += b"\0" * (-len(prefix) % 8)
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    return prefix + payload


def load_tensors(blob: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise WeightFormatError("not a weight file (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight file version {version}")
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    offset += -offset % 8
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise WeightFormatError(f"truncated payload at tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise WeightFormatError(f"{len(blob) - offset} trailing bytes after payload")
    return header["kind"], header["meta"], tensors


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_shuffle(path: str | Path, params: ShuffleParams, m: int) -> None:
    meta = {"m": m, "c_l": params.weight.shape[0], "c_q": params.weight.shape[1] // m}
    atomic_write_bytes(path, dump_tensors("token_shuffle", meta, {"weight": params.weight, "bias": params.bias}))


def load_shuffle(path: str | Path) -> tuple[ShuffleParams, int]:
    kind, meta, tensors = load_tensors(Path(path).read_bytes())
    if kind != "token_shuffle":
        raise WeightFormatError(f"expected token_shuffle weights, found {kind!r}")
    return ShuffleParams(tensors["weight"], tensors["bias"]), int(meta["m"])


def save_tape(path: str | Path, params: TapeParams) -> None:
    meta = {"config": asdict(params.config), "frozen": params.frozen}
    atomic_write_bytes(path, dump_tensors("tape", meta, params.tensors))


def load_tape(path: str | Path) -> TapeParams:
    kind, meta, tensors = load_tensors(Path(path).read_bytes())
    if kind != "tape":
        raise WeightFormatError(f"expected tape weights, found {kind!r}")
    return TapeParams(TapeConfig(**meta["config"]), tensors, frozen=bool(meta["frozen"]))
