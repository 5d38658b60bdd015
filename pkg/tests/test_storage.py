"""Serialization: byte layout, hashes, round trips, and error classes."""

import hashlib
import json
import struct
import subprocess

import numpy as np
import pytest
import torch

from depthprune import (
    BoundarySet,
    FormatError,
    IntegrityError,
    MetricKind,
    PlanError,
    ShapeError,
    TensorF,
    VersionError,
    build_plan,
    forward_capture,
    load_model,
    perplexity,
    plan_from_json,
    plan_to_json,
    read_dump,
    read_plan,
    read_sdt,
    save_model,
    write_dump,
    write_plan,
    write_sdt,
)

MAGIC = b"SDTENSR1"


def hand_write_sdt(path, array32):
    """Independent writer driven straight off the documented byte layout."""
    arr = np.asarray(array32, dtype="<f4")
    blob = MAGIC + struct.pack("<I", arr.ndim)
    blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    blob += arr.tobytes(order="C")
    path.write_bytes(blob)


def hand_write_dump(root, arrays32, source="external-model", calibration="chunks"):
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, arr in enumerate(arrays32):
        name = f"boundary_{i:04d}.sdt"
        hand_write_sdt(root / name, arr)
        files[name] = hashlib.sha256((root / name).read_bytes()).hexdigest()
    b, s, d = arrays32[0].shape
    manifest = {
        "format": "sdt-dump",
        "version": 1,
        "layers": len(arrays32) - 1,
        "batch": b,
        "seq_len": s,
        "hidden_dim": d,
        "source": source,
        "calibration": calibration,
        "hash_algorithm": "sha256",
        "files": files,
        "note": "unknown keys must be tolerated",
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


@pytest.fixture()
def boundary_set():
    rng = np.random.default_rng(40)
    tensors = tuple(TensorF.from_array(rng.normal(size=(2, 3, 4))) for _ in range(4))
    return BoundarySet(tensors, "model-fp", "calib-fp")


class TestSdtFile:
    def test_round_trip_preserves_float32_bits(self, tmp_path):
        rng = np.random.default_rng(41)
        arr = rng.normal(size=(3, 5)).astype(np.float32)
        target = tmp_path / "t.sdt"
        write_sdt(target, arr)
        back = read_sdt(target)
        assert back.dtype == np.float32
        assert back.tobytes() == arr.tobytes()

    def test_write_narrows_round_to_nearest_even(self, tmp_path):
        values = np.array([1.0 + 2.0**-30, -3.1415926535897932, 1e-45], dtype=np.float64)
        target = tmp_path / "n.sdt"
        write_sdt(target, values)
        assert np.array_equal(read_sdt(target), values.astype(np.float32))

    def test_bad_magic(self, tmp_path):
        target = tmp_path / "bad.sdt"
        target.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(FormatError):
            read_sdt(target)

    def test_truncated_payload_names_file_and_byte_count(self, tmp_path):
        arr = np.ones((2, 4), dtype=np.float32)
        target = tmp_path / "short.sdt"
        write_sdt(target, arr)
        blob = target.read_bytes()
        target.write_bytes(blob[:-5])
        with pytest.raises(FormatError) as excinfo:
            read_sdt(target)
        message = str(excinfo.value)
        assert "short.sdt" in message
        assert str(len(blob)) in message

    def test_trailing_bytes_rejected(self, tmp_path):
        arr = np.ones(3, dtype=np.float32)
        target = tmp_path / "long.sdt"
        write_sdt(target, arr)
        target.write_bytes(target.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            read_sdt(target)


class TestDump:
    def test_round_trip_bit_identical_at_stored_precision(self, tmp_path, boundary_set):
        write_dump(boundary_set, tmp_path / "dump")
        back = read_dump(tmp_path / "dump")
        assert back.layer_count == boundary_set.layer_count
        assert back.model_fingerprint == "model-fp"
        assert back.calib_fingerprint == "calib-fp"
        for orig, loaded in zip(boundary_set.boundaries, back.boundaries):
            narrowed = orig.to_array().astype(np.float32)
            assert loaded.to_array().astype(np.float32).tobytes() == narrowed.tobytes()

    def test_second_write_is_byte_identical(self, tmp_path, boundary_set):
        write_dump(boundary_set, tmp_path / "a")
        write_dump(boundary_set, tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_reads_independently_written_dump(self, tmp_path):
        rng = np.random.default_rng(42)
        arrays = [rng.normal(size=(2, 16, 8)).astype(np.float32) for _ in range(3)]
        hand_write_dump(tmp_path / "ext", arrays)
        back = read_dump(tmp_path / "ext")
        assert back.layer_count == 2
        assert back.token_shape == (2, 16, 8)
        assert back.model_fingerprint == "external-model"
        for arr, loaded in zip(arrays, back.boundaries):
            assert np.array_equal(loaded.to_array(), arr.astype(np.float64))

    def test_manifest_hashes_verify_against_sha256sum_tool(self, tmp_path, boundary_set):
        write_dump(boundary_set, tmp_path / "dump")
        manifest = json.loads((tmp_path / "dump" / "manifest.json").read_text())
        for name, recorded in manifest["files"].items():
            out = subprocess.run(
                ["sha256sum", str(tmp_path / "dump" / name)],
                capture_output=True,
                text=True,
                check=True,
            )
            assert out.stdout.split()[0] == recorded

    def test_hash_mismatch_raises_integrity_error(self, tmp_path, boundary_set):
        write_dump(boundary_set, tmp_path / "dump")
        victim = tmp_path / "dump" / "boundary_0001.sdt"
        blob = bytearray(victim.read_bytes())
        blob[-1] ^= 0xFF
        victim.write_bytes(bytes(blob))
        with pytest.raises(IntegrityError):
            read_dump(tmp_path / "dump")

    def test_inconsistent_shapes_raise_shape_error(self, tmp_path):
        rng = np.random.default_rng(43)
        arrays = [
            rng.normal(size=(2, 4, 8)).astype(np.float32),
            rng.normal(size=(2, 4, 8)).astype(np.float32),
            rng.normal(size=(2, 5, 8)).astype(np.float32),
        ]
        root = tmp_path / "bad"
        root.mkdir()
        files = {}
        for i, arr in enumerate(arrays):
            name = f"boundary_{i:04d}.sdt"
            hand_write_sdt(root / name, arr)
            files[name] = hashlib.sha256((root / name).read_bytes()).hexdigest()
        manifest = {
            "format": "sdt-dump",
            "version": 1,
            "layers": 2,
            "batch": 2,
            "seq_len": 4,
            "hidden_dim": 8,
            "source": "x",
            "hash_algorithm": "sha256",
            "files": files,
        }
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ShapeError):
            read_dump(root)

    def test_missing_manifest(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(FormatError):
            read_dump(tmp_path / "empty")

    def test_unknown_version(self, tmp_path, boundary_set):
        write_dump(boundary_set, tmp_path / "dump")
        manifest_path = tmp_path / "dump" / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        doc["version"] = 99
        manifest_path.write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            read_dump(tmp_path / "dump")

    def test_empty_boundary_list_impossible(self):
        with pytest.raises(ShapeError):
            BoundarySet((), "m", "c")


@pytest.fixture()
def sample_plan(small_boundaries):
    return build_plan(small_boundaries, 0.75, MetricKind.MASD, 1)


class TestPlanFile:
    def test_round_trip_equality(self, sample_plan):
        assert plan_from_json(plan_to_json(sample_plan)) == sample_plan

    def test_serialization_is_canonical(self, sample_plan):
        assert plan_to_json(sample_plan) == plan_to_json(sample_plan)

    def test_file_round_trip(self, tmp_path, sample_plan):
        write_plan(sample_plan, tmp_path / "plan.json")
        assert read_plan(tmp_path / "plan.json") == sample_plan

    def test_non_prefix_prune_set_rejected_on_load(self, sample_plan):
        doc = json.loads(plan_to_json(sample_plan))
        doc["pruned_indices"] = [doc["ranking"][-1]]
        with pytest.raises(PlanError):
            plan_from_json(json.dumps(doc))

    def test_k_zero_plan_loads_and_applies_as_noop(self, tmp_path, small_boundaries, small_model, small_calib):
        plan = build_plan(small_boundaries, 0.5, MetricKind.MSSD, 0)
        write_plan(plan, tmp_path / "k0.json")
        loaded = read_plan(tmp_path / "k0.json")
        assert perplexity(small_model, loaded, small_calib) == perplexity(small_model, None, small_calib)

    def test_unknown_version(self, sample_plan):
        doc = json.loads(plan_to_json(sample_plan))
        doc["version"] = 2
        with pytest.raises(VersionError):
            plan_from_json(json.dumps(doc))

    def test_malformed_json(self):
        with pytest.raises(FormatError):
            plan_from_json("{not json")

    def test_tampered_score_rejected(self, sample_plan):
        doc = json.loads(plan_to_json(sample_plan))
        doc["scores"][0]["importance"] = 0.123456
        with pytest.raises(PlanError):
            plan_from_json(json.dumps(doc))

    def test_float_values_round_trip_exactly(self, sample_plan):
        loaded = plan_from_json(plan_to_json(sample_plan))
        for a, b in zip(loaded.per_layer_scores, sample_plan.per_layer_scores):
            assert a.l_sim == b.l_sim and a.l_diff == b.l_diff
            assert a.importance == b.importance


class TestCheckpoint:
    def test_round_trip_at_stored_precision(self, tmp_path, small_model):
        save_model(small_model, tmp_path / "ckpt")
        loaded = load_model(tmp_path / "ckpt")
        save_model(loaded, tmp_path / "ckpt2")
        names = sorted(p.name for p in (tmp_path / "ckpt").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "ckpt2").iterdir())
        for name in names:
            assert (tmp_path / "ckpt" / name).read_bytes() == (tmp_path / "ckpt2" / name).read_bytes()

    def test_loaded_model_runs(self, tmp_path, small_model, small_calib):
        save_model(small_model, tmp_path / "ckpt")
        loaded = load_model(tmp_path / "ckpt")
        assert loaded.layer_count == small_model.layer_count
        boundaries, logits = forward_capture(loaded, small_calib)
        assert boundaries.layer_count == small_model.layer_count
        assert torch.isfinite(logits).all()

    def test_corrupted_weight_raises_integrity_error(self, tmp_path, small_model):
        save_model(small_model, tmp_path / "ckpt")
        victim = tmp_path / "ckpt" / "lm_head.sdt"
        blob = bytearray(victim.read_bytes())
        blob[-1] ^= 0x01
        victim.write_bytes(bytes(blob))
        with pytest.raises(IntegrityError):
            load_model(tmp_path / "ckpt")
