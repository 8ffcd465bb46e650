"""Binary model checkpoints.

Layout: magic "UBCTCKPT", u32 format version, u32 record count, then one
length-prefixed record per named array (u32 name length, utf-8 name, u32
rank, u32 extents, float64 little-endian payload), then the per-layer step
sizes as u32 count + float64 values, and finally a utf-8 echo of the
training configuration (u32 byte length + text).

Optimizer state rides along as ordinary records under ``opt.`` names so a
resumed run continues bit-exactly.
"""

import struct

import numpy as np

MAGIC = b"UBCTCKPT"
VERSION = 1


def _write_record(fh, name, arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8", copy=False).tobytes())


def _read_record(fh):
    (name_len,) = struct.unpack("<I", fh.read(4))
    name = fh.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if ndim else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("checkpoint record truncated")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return name, arr


def save_checkpoint(path, records, mu, config_text=""):
    """Write named arrays, the step-size vector, and a config echo.

    records: iterable of (name, array) pairs, order preserved.
    """
    records = list(records)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, arr)
        fh.write(struct.pack("<I", mu.size))
        fh.write(mu.astype("<f8", copy=False).tobytes())
        raw = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint back as (records dict, mu array, config text)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (n_records,) = struct.unpack("<I", fh.read(4))
        records = {}
        for _ in range(n_records):
            name, arr = _read_record(fh)
            records[name] = arr
        (k,) = struct.unpack("<I", fh.read(4))
        payload = fh.read(8 * k)
        if len(payload) != 8 * k:
            raise ValueError(f"{path}: truncated step-size block")
        mu = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config_text = fh.read(cfg_len).decode("utf-8")
    return records, mu, config_text
