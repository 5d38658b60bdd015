"""Bit-exact serialization: boundary dumps, plans, and model checkpoints.

Tensor container (.sdt), little-endian throughout:

    offset 0   8 bytes   magic "SDTENSR1"
    offset 8   u32       rank
    offset 12  rank*u64  dims
    then       IEEE-754 float32 payload, row-major, exactly prod(dims) values

A boundary dump is a directory of boundary_0000.sdt .. boundary_{L:04d}.sdt
plus manifest.json recording layers, batch, seq_len, hidden_dim, the source
identifier and a sha256 per file. Values are stored as float32
(round-to-nearest-even on write) and widened to float64 on read. Plans are
canonical JSON: fixed key order, repr-exact floats, so serializing the same
plan twice yields byte-identical files.
"""

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError, IntegrityError, PlanError, ShapeError, VersionError
from .metrics import MetricKind
from .scoring import LayerScore, PruningPlan
from .tensors import BoundarySet, TensorF
from .toymodel import LayerWeights, ToyModel

__all__ = [
    "SDT_MAGIC",
    "DUMP_MANIFEST",
    "MODEL_MANIFEST",
    "write_sdt",
    "read_sdt",
    "write_dump",
    "read_dump",
    "plan_to_json",
    "plan_from_json",
    "write_plan",
    "read_plan",
    "save_model",
    "load_model",
]

SDT_MAGIC = b"SDTENSR1"
DUMP_MANIFEST = "manifest.json"
MODEL_MANIFEST = "model.json"
_DUMP_VERSION = 1
_PLAN_VERSION = 1
_MODEL_VERSION = 1


def _sha256_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(path.read_bytes())


def _canonical_json(obj) -> str:
    # Insertion order of dict keys is the canonical order.
    return json.dumps(obj, indent=2) + "\n"


def write_sdt(path, array) -> None:
    """Write one tensor, narrowing to float32 round-to-nearest-even."""
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    header = SDT_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_sdt(path) -> np.ndarray:
    """Read one tensor back as float32, verifying the byte layout exactly."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:8] != SDT_MAGIC:
        raise FormatError(f"{path.name}: bad magic, not an SDTENSR1 file")
    (rank,) = struct.unpack_from("<I", blob, 8)
    dims_end = 12 + 8 * rank
    if len(blob) < dims_end:
        raise FormatError(f"{path.name}: truncated header, expected {dims_end} bytes")
    dims = struct.unpack_from(f"<{rank}Q", blob, 12) if rank else ()
    count = math.prod(dims)
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path.name}: expected {expected} bytes ({count} float32 values), found {len(blob)}"
        )
    payload = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return payload.reshape(dims)


def _boundary_name(i: int) -> str:
    return f"boundary_{i:04d}.sdt"


def write_dump(boundaries: BoundarySet, path) -> None:
    """Write all boundaries plus a hashed manifest into a directory."""
    if boundaries.layer_count < 1:
        raise FormatError("a dump needs at least 1 layer (2 boundaries)")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    b, s, d = boundaries.token_shape
    files = {}
    for i, tensor in enumerate(boundaries.boundaries):
        name = _boundary_name(i)
        write_sdt(out / name, tensor.to_array())
        files[name] = _sha256_file(out / name)
    manifest = {
        "format": "sdt-dump",
        "version": _DUMP_VERSION,
        "layers": boundaries.layer_count,
        "batch": b,
        "seq_len": s,
        "hidden_dim": d,
        "source": boundaries.model_fingerprint,
        "calibration": boundaries.calib_fingerprint,
        "hash_algorithm": "sha256",
        "files": files,
    }
    (out / DUMP_MANIFEST).write_text(_canonical_json(manifest), encoding="utf-8")


def _load_manifest(manifest_path: Path, expected_format: str) -> dict:
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path.name}: invalid JSON ({exc})") from exc
    if manifest.get("format") != expected_format:
        raise FormatError(f"{manifest_path.name}: format {manifest.get('format')!r} is not {expected_format!r}")
    return manifest


def _check_version(manifest: dict, expected: int, what: str) -> None:
    version = manifest.get("version")
    if version != expected:
        raise VersionError(f"unsupported {what} version {version!r} (expected {expected})")


def _verify_files(root: Path, manifest: dict) -> None:
    algorithm = manifest.get("hash_algorithm")
    if algorithm != "sha256":
        raise FormatError(f"unsupported hash algorithm {algorithm!r}")
    for name, recorded in manifest["files"].items():
        target = root / name
        if not target.is_file():
            raise FormatError(f"missing file {name}")
        actual = _sha256_file(target)
        if actual != recorded:
            raise IntegrityError(f"{name}: hash {actual} does not match manifest {recorded}")


def read_dump(path) -> BoundarySet:
    """Load a boundary dump, verifying hashes, layout, and shape consistency."""
    root = Path(path)
    manifest = _load_manifest(root / DUMP_MANIFEST, "sdt-dump")
    _check_version(manifest, _DUMP_VERSION, "dump")
    layers = int(manifest["layers"])
    expected_names = [_boundary_name(i) for i in range(layers + 1)]
    missing = [n for n in expected_names if n not in manifest["files"]]
    if missing:
        raise FormatError(f"manifest lists no hash for {missing[0]}")
    _verify_files(root, manifest)

    expected_shape = (int(manifest["batch"]), int(manifest["seq_len"]), int(manifest["hidden_dim"]))
    tensors = []
    for name in expected_names:
        arr = read_sdt(root / name)
        if arr.ndim != 3:
            raise ShapeError(f"{name}: boundary must be rank 3, got rank {arr.ndim}")
        if arr.shape != expected_shape:
            raise ShapeError(f"{name}: shape {arr.shape} does not match manifest {expected_shape}")
        tensors.append(TensorF.from_array(arr.astype(np.float64)))
    return BoundarySet(
        tuple(tensors),
        model_fingerprint=str(manifest["source"]),
        calib_fingerprint=str(manifest.get("calibration", "")),
    )


def plan_to_json(plan: PruningPlan) -> str:
    doc = {
        "version": _PLAN_VERSION,
        "total_layers": plan.total_layers,
        "k": plan.k,
        "alpha": plan.alpha,
        "metric": plan.metric_kind.value,
        "pruned_indices": list(plan.pruned_indices),
        "excluded_indices": list(plan.excluded_indices),
        "ranking": list(plan.ranking),
        "scores": [
            {
                "layer_index": s.layer_index,
                "l_sim": s.l_sim,
                "l_diff": s.l_diff,
                "i_sim": s.i_sim,
                "i_diff": s.i_diff,
                "importance": s.importance,
            }
            for s in plan.per_layer_scores
        ],
        "calibration_fingerprint": plan.calibration_fingerprint,
        "tie_break_events": plan.tie_break_events,
        "saturation_count": plan.saturation_count,
    }
    return _canonical_json(doc)


def plan_from_json(text: str) -> PruningPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid plan JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError("plan JSON must be an object")
    version = doc.get("version")
    if version != _PLAN_VERSION:
        raise VersionError(f"unsupported plan version {version!r} (expected {_PLAN_VERSION})")
    try:
        metric = MetricKind.from_name(doc["metric"])
        alpha = float(doc["alpha"])
        scores = tuple(
            LayerScore(
                layer_index=int(rec["layer_index"]),
                l_sim=float(rec["l_sim"]),
                l_diff=float(rec["l_diff"]),
                i_sim=float(rec["i_sim"]),
                i_diff=float(rec["i_diff"]),
                importance=float(rec["importance"]),
                alpha=alpha,
                metric_kind=metric,
            )
            for rec in doc["scores"]
        )
        plan = PruningPlan(
            total_layers=int(doc["total_layers"]),
            pruned_indices=tuple(doc["pruned_indices"]),
            ranking=tuple(doc["ranking"]),
            alpha=alpha,
            metric_kind=metric,
            calibration_fingerprint=str(doc["calibration_fingerprint"]),
            per_layer_scores=scores,
            excluded_indices=tuple(doc.get("excluded_indices", ())),
            tie_break_events=int(doc["tie_break_events"]),
            saturation_count=int(doc["saturation_count"]),
        )
    except KeyError as exc:
        raise FormatError(f"plan JSON missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"plan JSON has malformed values ({exc})") from exc
    if plan.k != int(doc["k"]):
        raise PlanError(f"recorded k={doc['k']} does not match {plan.k} pruned indices")
    return plan


def write_plan(plan: PruningPlan, path) -> None:
    Path(path).write_text(plan_to_json(plan), encoding="utf-8")


def read_plan(path) -> PruningPlan:
    return plan_from_json(Path(path).read_text(encoding="utf-8"))


def save_model(model: ToyModel, path) -> None:
    """Persist a model as one .sdt per weight plus a hashed manifest.

    Weights narrow to float32 on disk; loading widens back to float64, so a
    save/load round trip is exact at the stored precision.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, tensor in model.weight_items():
        filename = f"{name}.sdt"
        write_sdt(out / filename, tensor.detach().numpy())
        files[filename] = _sha256_file(out / filename)
    manifest = {
        "format": "toy-checkpoint",
        "version": _MODEL_VERSION,
        "vocab_size": model.vocab_size,
        "hidden_dim": model.hidden_dim,
        "layer_count": model.layer_count,
        "head_count": model.head_count,
        "max_positions": model.max_positions,
        "seed": model.seed,
        "hash_algorithm": "sha256",
        "files": files,
    }
    (out / MODEL_MANIFEST).write_text(_canonical_json(manifest), encoding="utf-8")


def load_model(path) -> ToyModel:
    root = Path(path)
    manifest = _load_manifest(root / MODEL_MANIFEST, "toy-checkpoint")
    _check_version(manifest, _MODEL_VERSION, "checkpoint")
    _verify_files(root, manifest)

    def tensor(name: str) -> torch.Tensor:
        filename = f"{name}.sdt"
        if filename not in manifest["files"]:
            raise FormatError(f"manifest lists no hash for {filename}")
        return torch.from_numpy(read_sdt(root / filename).astype(np.float64))

    layer_count = int(manifest["layer_count"])
    layers = [
        LayerWeights(**{field: tensor(f"layer_{i:04d}.{field}") for field in LayerWeights._FIELDS})
        for i in range(layer_count)
    ]
    return ToyModel(
        vocab_size=int(manifest["vocab_size"]),
        hidden_dim=int(manifest["hidden_dim"]),
        layer_count=layer_count,
        head_count=int(manifest["head_count"]),
        max_positions=int(manifest["max_positions"]),
        seed=int(manifest["seed"]),
        embedding=tensor("embedding"),
        pos_embedding=tensor("pos_embedding"),
        layers=layers,
        final_norm=tensor("final_norm"),
        lm_head=tensor("lm_head"),
    )
