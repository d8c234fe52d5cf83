"""Binary dataset files.

Layout (little-endian)::

    b"S2MB" | u32 schema version | u32 n | n bytes UTF-8 JSON config block
    | u64 sample count | u64 seed | u32 CRC32 | count fixed-stride records

The CRC32 covers the config block, count, seed and every record byte.  The
record layout is :func:`sam2b.sensors.record_dtype`.  A key=value manifest
is written next to the file as ``<path>.manifest.txt``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FileFormatError, TruncatedFileError, VersionMismatchError
from .sensors import SCHEMA_VERSION, Dataset, record_dtype

MAGIC = b"S2MB"


def _config_block(ds: Dataset) -> bytes:
    block = {"frame_shape": list(ds.frame_shape), "manifest": ds.manifest}
    return json.dumps(block, sort_keys=True).encode("utf-8")


def encode_dataset(ds: Dataset) -> bytes:
    cfg = _config_block(ds)
    count_seed = struct.pack("<QQ", len(ds), int(ds.manifest.get("seed", 0)))
    body = ds.records.tobytes()
    crc = zlib.crc32(body, zlib.crc32(count_seed, zlib.crc32(cfg)))
    return b"".join([MAGIC, struct.pack("<II", SCHEMA_VERSION, len(cfg)), cfg,
                     count_seed, struct.pack("<I", crc), body])


def decode_dataset(raw: bytes) -> Dataset:
    if len(raw) < 12:
        raise TruncatedFileError("dataset header truncated")
    if raw[:4] != MAGIC:
        raise FileFormatError(f"bad magic {raw[:4]!r}")
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(f"schema version {version}, expected {SCHEMA_VERSION}")
    off = 12
    if len(raw) < off + cfg_len + 20:
        raise TruncatedFileError("dataset header truncated")
    cfg = raw[off:off + cfg_len]
    off += cfg_len
    count, _seed = struct.unpack_from("<QQ", raw, off)
    count_seed = raw[off:off + 16]
    (crc,) = struct.unpack_from("<I", raw, off + 16)
    off += 20
    try:
        block = json.loads(cfg.decode("utf-8"))
        shape = tuple(block["frame_shape"])
        dtype = record_dtype(shape)
    except (ValueError, KeyError, TypeError) as exc:
        raise ChecksumError(f"unreadable config block: {exc}") from exc
    body = raw[off:]
    if len(body) != count * dtype.itemsize:
        if len(body) < count * dtype.itemsize:
            raise TruncatedFileError(f"expected {count * dtype.itemsize} record bytes, found {len(body)}")
        raise ChecksumError("trailing bytes after records")
    if zlib.crc32(body, zlib.crc32(count_seed, zlib.crc32(cfg))) != crc:
        raise ChecksumError("CRC32 mismatch")
    records = np.frombuffer(body, dtype=dtype).copy()
    return Dataset(records, block["manifest"], shape)


def manifest_text(ds: Dataset) -> str:
    def flat(prefix, obj, out):
        if isinstance(obj, dict):
            for k in sorted(obj):
                flat(f"{prefix}.{k}" if prefix else k, obj[k], out)
        else:
            out.append(f"{prefix} = {json.dumps(obj)}")
        return out

    return "\n".join(flat("", ds.manifest, [])) + "\n"


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_dataset(ds))
    path.with_name(path.name + ".manifest.txt").write_text(manifest_text(ds))
    return path


def load_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())
