"""Capture per-layer hidden states from a pretrained causal LM.

Boundary 0 is the embedding-stage stream; boundary i+1 is the raw output of
decoder block i, taken from forward hooks on the block modules (the
framework's own hidden-state list runs its final norm into the last entry,
which would contaminate the last layer's boundary). Calibration text is
tokenized into fixed-length unpadded chunks and a fixed-seed sampler picks
the requested number of chunks, so identical jobs re-export identical
dumps.
"""

import hashlib
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .sdt import write_boundary_dump


class ExportError(Exception):
    """Checkpoint loading or calibration preparation failed."""


@dataclass(frozen=True)
class ExportJob:
    model_id: str
    text_path: str
    samples: int
    seq_len: int
    batch_size: int
    out_dir: str
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1 or self.seq_len < 2 or self.batch_size < 1:
            raise ExportError("samples >= 1, seq_len >= 2 and batch_size >= 1 required")


def find_decoder_blocks(model):
    """The ordered decoder-block list for GPT-2-style and llama-style models."""
    if hasattr(model, "transformer") and hasattr(model.transformer, "h"):
        return list(model.transformer.h)
    if hasattr(model, "model") and hasattr(model.model, "layers"):
        return list(model.model.layers)
    raise ExportError("unsupported architecture: no decoder block list found")


def _load(job: ExportJob):
    from transformers import AutoModelForCausalLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(job.model_id)
        model = AutoModelForCausalLM.from_pretrained(job.model_id)
    except Exception as exc:
        raise ExportError(f"cannot load checkpoint {job.model_id!r}: {exc}") from exc
    model.eval()
    return model, tokenizer


def _sample_windows(ids, job: ExportJob) -> np.ndarray:
    windows = len(ids) // job.seq_len
    if windows < job.samples:
        raise ExportError(
            f"text yields {windows} windows of {job.seq_len} tokens, need {job.samples}"
        )
    rng = np.random.default_rng(job.seed)
    chosen = np.sort(rng.choice(windows, size=job.samples, replace=False))
    rows = [ids[w * job.seq_len : (w + 1) * job.seq_len] for w in chosen]
    return np.asarray(rows, dtype=np.int64)


def capture_boundaries(model, token_rows: np.ndarray):
    """Run batches through the model, hooking every decoder block.

    Returns L+1 float32 arrays of shape (rows, seq_len, hidden).
    """
    blocks = find_decoder_blocks(model)
    collected = [[] for _ in range(len(blocks) + 1)]
    block_outputs = {}

    def make_hook(index):
        def hook(_module, _inputs, output):
            hidden = output[0] if isinstance(output, (tuple, list)) else output
            block_outputs[index] = hidden.detach()
        return hook

    handles = [block.register_forward_hook(make_hook(i)) for i, block in enumerate(blocks)]
    try:
        with torch.no_grad():
            batch = torch.from_numpy(token_rows)
            out = model(input_ids=batch, output_hidden_states=True, use_cache=False)
            collected[0].append(out.hidden_states[0].detach().to(torch.float32).numpy())
            for i in range(len(blocks)):
                collected[i + 1].append(block_outputs[i].to(torch.float32).numpy())
    finally:
        for handle in handles:
            handle.remove()
    return [np.concatenate(parts, axis=0) for parts in collected]


def reference_cosine_dissimilarity(boundaries) -> list:
    """The exporter's own per-layer check value: 1 - mean token cosine.

    Straightforward per-token loop with float64 accumulation over the
    float32 capture.
    """
    values = []
    for h_in, h_out in zip(boundaries, boundaries[1:]):
        a = h_in.astype(np.float64).reshape(-1, h_in.shape[-1])
        b = h_out.astype(np.float64).reshape(-1, h_out.shape[-1])
        total = 0.0
        for j in range(a.shape[0]):
            norm = float(np.linalg.norm(a[j])) * float(np.linalg.norm(b[j]))
            if norm >= 1e-12:
                total += float(a[j] @ b[j]) / norm
        values.append(1.0 - total / a.shape[0])
    return values


def export_hidden_states(job: ExportJob) -> dict:
    """Run the job and write the dump; returns the manifest dict.

    A failure after files were created removes the partial dump.
    """
    model, tokenizer = _load(job)
    text = Path(job.text_path).read_text(encoding="utf-8")
    ids = tokenizer(text, add_special_tokens=False)["input_ids"]
    token_rows = _sample_windows(ids, job)

    out_dir = Path(job.out_dir)
    created = not out_dir.exists()
    try:
        chunks = []
        for start in range(0, token_rows.shape[0], job.batch_size):
            chunks.append(capture_boundaries(model, token_rows[start : start + job.batch_size]))
        boundaries = [np.concatenate(parts, axis=0) for parts in zip(*chunks)]
        calib_tag = hashlib.sha256(
            f"{hashlib.sha256(text.encode('utf-8')).hexdigest()}:{job.seed}:"
            f"{job.samples}:{job.seq_len}".encode("utf-8")
        ).hexdigest()
        return write_boundary_dump(
            job.out_dir,
            boundaries,
            source=job.model_id,
            calibration=calib_tag,
            extra={
                "samples": job.samples,
                "seq_len": job.seq_len,
                "batch_size": job.batch_size,
                "seed": job.seed,
                "padding": "none (fixed-length unpadded chunks)",
            },
        )
    except Exception:
        if created and out_dir.exists():
            shutil.rmtree(out_dir)
        raise
