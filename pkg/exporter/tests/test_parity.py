"""Cross-component acceptance: the engine ingests exporter dumps cleanly and
both sides agree on per-layer cosine dissimilarity within 1e-6 relative."""

import numpy as np
import pytest

from hiddendump import ExportJob, export_hidden_states, reference_cosine_dissimilarity

depthprune = pytest.importorskip("depthprune", reason="engine package not installed")


@pytest.fixture(scope="module")
def exported(tiny_checkpoint, calibration_text, tmp_path_factory):
    out = tmp_path_factory.mktemp("parity") / "dump"
    job = ExportJob(
        model_id=str(tiny_checkpoint),
        text_path=str(calibration_text),
        samples=2,
        seq_len=16,
        batch_size=2,
        out_dir=str(out),
        seed=0,
    )
    manifest = export_hidden_states(job)
    return out, manifest


class TestExporterParity:
    def test_engine_integrity_and_shape_checks_pass(self, exported):
        out, manifest = exported
        boundaries = depthprune.read_dump(out)
        assert boundaries.layer_count == manifest["layers"] == 2
        assert boundaries.token_shape == (2, 16, 32)
        assert boundaries.model_fingerprint == manifest["source"]

    def test_cosine_dissimilarity_parity_within_1e6(self, exported):
        out, _ = exported
        boundaries = depthprune.read_dump(out)

        engine_values = []
        for i in range(boundaries.layer_count):
            h_in = depthprune.flatten_tokens(boundaries.boundaries[i])
            h_out = depthprune.flatten_tokens(boundaries.boundaries[i + 1])
            value, _ = depthprune.cosine_dissimilarity(h_in, h_out)
            engine_values.append(value)

        stored = [b.to_array().astype(np.float32) for b in boundaries.boundaries]
        reference_values = reference_cosine_dissimilarity(stored)

        for ours, theirs in zip(reference_values, engine_values):
            assert theirs > 0.0  # non-degenerate model: layers change their input
            assert abs(ours - theirs) <= 1e-6 * max(abs(ours), abs(theirs))

    def test_engine_scores_the_dump_end_to_end(self, exported):
        out, _ = exported
        boundaries = depthprune.read_dump(out)
        plan = depthprune.build_plan(boundaries, 0.5, depthprune.MetricKind.MSSD, 1)
        assert plan.total_layers == 2
        assert len(plan.pruned_indices) == 1
