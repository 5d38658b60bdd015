"""Writer for the boundary-dump interchange format.

Implemented against the documented byte layout, independently of the
engine that consumes it:

    offset 0   8 bytes   magic "SDTENSR1"
    offset 8   u32 LE    rank
    offset 12  rank*u64  dims (little-endian)
    then       float32 LE payload, row-major, exactly prod(dims) values

manifest.json records layers, batch, seq_len, hidden_dim, the source model
identifier, and a sha256 per file.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SDTENSR1"
MANIFEST = "manifest.json"


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    blob = MAGIC + struct.pack("<I", arr.ndim)
    if arr.ndim:
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(blob + arr.tobytes(order="C"))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_boundary_dump(out_dir, boundaries, source, calibration, extra=None) -> dict:
    """Write boundary_0000.sdt .. boundary_{L:04d}.sdt plus the manifest.

    boundaries: list of L+1 float32 arrays sharing one (B, S, D) shape.
    Returns the manifest dict as written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {tuple(b.shape) for b in boundaries}
    if len(boundaries) < 2 or len(shapes) != 1:
        raise ValueError("need >= 2 boundaries with one common (B, S, D) shape")
    batch, seq_len, hidden = boundaries[0].shape
    files = {}
    for i, boundary in enumerate(boundaries):
        name = f"boundary_{i:04d}.sdt"
        write_tensor(out / name, boundary)
        files[name] = sha256_file(out / name)
    manifest = {
        "format": "sdt-dump",
        "version": 1,
        "layers": len(boundaries) - 1,
        "batch": int(batch),
        "seq_len": int(seq_len),
        "hidden_dim": int(hidden),
        "source": source,
        "calibration": calibration,
        "hash_algorithm": "sha256",
        "files": files,
    }
    if extra:
        manifest["export"] = extra
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
