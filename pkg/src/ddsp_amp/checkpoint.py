"""Binary checkpoint format.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"DDSPAMP\\0"
    8       4     uint32 header length N
    12      N     UTF-8 JSON header (sorted keys, no whitespace)
    12+N    4     uint32 CRC-32 of the header bytes
    16+N    D     parameters as float32 LE, concatenated in header "layout" order
    16+N+D  4     uint32 CRC-32 of the parameter bytes

Header keys: ``format_version`` (1), ``arch`` (e.g. ``ddsp-F``,
``concat-gru-48``), ``knob_count`` (5), ``layout`` (list of
``[name, shape]``) and ``metadata`` (free-form, deterministic: no clocks).
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .amp import KNOBS, AmpModel
from .baseline import ConcatGruModel

MAGIC = b"DDSPAMP\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def build_model(arch: str, params=None, seed: int = 0):
    """Instantiate a model from an architecture identifier or a preset letter A-F."""
    key = arch.strip()
    if key.upper() in ("A", "B"):
        key = f"concat-gru-{8 if key.upper() == 'A' else 48}"
    if key.upper() in ("C", "D", "E", "F"):
        key = f"ddsp-{key.upper()}"
    if key.startswith("ddsp-"):
        return AmpModel(key[5:], params=params, seed=seed)
    if key.startswith("concat-gru-"):
        return ConcatGruModel(int(key[len("concat-gru-"):]), params=params, seed=seed)
    raise CheckpointError(f"unknown architecture {arch!r}")


def to_bytes(model, metadata: dict | None = None) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch,
        "knob_count": len(KNOBS),
        "layout": [[k, list(np.shape(v))] for k, v in model.params.items()],
        "metadata": {"created_by": f"ddsp-amp {__version__}", **(metadata or {})},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    data = b"".join(np.asarray(v, dtype="<f4").tobytes() for v in model.params.values())
    return b"".join([MAGIC, struct.pack("<I", len(hb)), hb, struct.pack("<I", zlib.crc32(hb)), data,
                     struct.pack("<I", zlib.crc32(data))])


def from_bytes(blob: bytes, expect_arch: str | None = None):
    """Return (model, header). Raises CheckpointError on corruption or mismatch."""
    if blob[:8] != MAGIC:
        raise CheckpointError("not a ddsp-amp checkpoint (bad magic)")
    try:
        (n,) = struct.unpack_from("<I", blob, 8)
        hb = blob[12 : 12 + n]
        (crc,) = struct.unpack_from("<I", blob, 12 + n)
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if len(hb) != n or zlib.crc32(hb) != crc:
        raise CheckpointError("checkpoint header checksum mismatch")
    header = json.loads(hb)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    if header.get("knob_count") != len(KNOBS):
        raise CheckpointError(f"checkpoint expects {header.get('knob_count')} knobs, this build has {len(KNOBS)}")
    arch = header["arch"]
    if expect_arch is not None and build_model(expect_arch).arch != arch:
        raise CheckpointError(f"architecture mismatch: checkpoint is {arch}, expected {expect_arch}")
    template = build_model(arch)
    layout = [(name, tuple(shape)) for name, shape in header["layout"]]
    if layout != list(template.shapes().items()):
        raise CheckpointError(f"layout descriptor does not match architecture {arch}")
    start = 16 + n
    size = 4 * sum(int(np.prod(s)) for _, s in layout)
    data = blob[start : start + size]
    if len(data) != size or len(blob) != start + size + 4:
        raise CheckpointError("checkpoint size does not match its layout")
    if zlib.crc32(data) != struct.unpack_from("<I", blob, start + size)[0]:
        raise CheckpointError("parameter data checksum mismatch")
    flat = np.frombuffer(data, dtype="<f4")
    params, pos = {}, 0
    for name, shape in layout:
        k = int(np.prod(shape))
        params[name] = flat[pos : pos + k].astype(np.float64).reshape(shape)
        pos += k
    return build_model(arch, params), header


def save(path, model, metadata: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, metadata))


def load(path, expect_arch: str | None = None):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    return from_bytes(path.read_bytes(), expect_arch)
