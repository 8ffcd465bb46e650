"""Flat binary array format and dataset directory layout.

Arrays travel as "CTF1" files: a 4-byte magic, u32 rank, u32 extents, then
the float32 payload in row-major order, everything little-endian.  A dataset
is a directory with four array subfolders plus a ``meta`` text file that
echoes the generating configuration.
"""

import os
import struct

import numpy as np

MAGIC = b"CTF1"

DATASET_SUBDIRS = ("clean", "sino_clean", "sino_ldct", "fbp_ldct")


def write_array(path, arr):
    """Write an array as a CTF1 file (stored as float32)."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_array(path):
    """Read a CTF1 file back as a float64 array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a CTF1 file (magic {magic!r})")
        (ndim,) = struct.unpack("<I", fh.read(4))
        if ndim == 0 or ndim > 8:
            raise ValueError(f"{path}: implausible rank {ndim}")
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return data.astype(np.float64)


def item_name(index):
    return f"{index:04d}.ctf"


def list_arrays(dirpath):
    """Sorted CTF1 file names in a directory."""
    return sorted(f for f in os.listdir(dirpath) if f.endswith(".ctf"))


def init_dataset_dir(root):
    """Create the dataset folder tree, returning the subdir paths."""
    os.makedirs(root, exist_ok=True)
    paths = {}
    for sub in DATASET_SUBDIRS:
        p = os.path.join(root, sub)
        os.makedirs(p, exist_ok=True)
        paths[sub] = p
    return paths


def write_meta(root, entries):
    """Echo configuration into <root>/meta as sorted key = value lines."""
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    with open(os.path.join(root, "meta"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_meta(root):
    entries = {}
    with open(os.path.join(root, "meta")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def load_dataset(root, subdirs=DATASET_SUBDIRS):
    """Load a dataset directory into a dict of lists of arrays.

    All subdirs must hold matching file sets; raises on mismatch.
    """
    names = None
    out = {}
    for sub in subdirs:
        p = os.path.join(root, sub)
        here = list_arrays(p)
        if names is None:
            names = here
        elif here != names:
            raise ValueError(f"{root}: file sets differ between subdirs ({sub})")
        out[sub] = [read_array(os.path.join(p, f)) for f in here]
    out["names"] = names or []
    return out
