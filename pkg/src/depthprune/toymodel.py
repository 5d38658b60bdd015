"""Desk-scale decoder-only transformer: the end-to-end substrate.

Pre-norm residual blocks run in float64 on CPU; each block updates the
stream twice (x += attn(norm(x)); x += mlp(norm(x))) and the stream is
captured once per layer boundary. Weights are drawn uniformly from
+/- 1/sqrt(hidden_dim) by numpy's seeded PCG64 generator in a fixed order
(embedding, positions, then per layer wq, wk, wv, wo, w_up, w_down, then
the lm head); norm scales start at one. Tokens are byte-level by default
(id == byte value, vocab 256), but any id stream below the vocab size is
accepted.
"""

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, PlanError, TrainError
from .scoring import PruningPlan
from .tensors import BoundarySet, TensorF

__all__ = [
    "MLP_FACTOR",
    "RMS_EPS",
    "LayerWeights",
    "ToyModel",
    "CalibrationSet",
    "ThroughputReport",
    "init_model",
    "forward_capture",
    "prune_and_forward",
    "perplexity",
    "next_token_loss",
    "training_loss",
    "train_micro",
    "bench_throughput",
    "apply_layer",
]

MLP_FACTOR = 4
RMS_EPS = 1e-6


@dataclass
class LayerWeights:
    """One pre-norm residual block's parameters."""

    attn_norm: torch.Tensor  # (D,)
    wq: torch.Tensor  # (D, D)
    wk: torch.Tensor  # (D, D)
    wv: torch.Tensor  # (D, D)
    wo: torch.Tensor  # (D, D)
    mlp_norm: torch.Tensor  # (D,)
    w_up: torch.Tensor  # (D, MLP_FACTOR*D)
    w_down: torch.Tensor  # (MLP_FACTOR*D, D)

    _FIELDS = ("attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_up", "w_down")

    def tensors(self):
        return [(name, getattr(self, name)) for name in self._FIELDS]

    def clone(self) -> "LayerWeights":
        return LayerWeights(**{name: t.detach().clone() for name, t in self.tensors()})


@dataclass
class ToyModel:
    """Decoder-only transformer with removable layers and recorded provenance."""

    vocab_size: int
    hidden_dim: int
    layer_count: int
    head_count: int
    max_positions: int
    seed: int
    embedding: torch.Tensor  # (V, D)
    pos_embedding: torch.Tensor  # (max_positions, D)
    layers: list
    final_norm: torch.Tensor  # (D,)
    lm_head: torch.Tensor  # (D, V)

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.head_count

    def weight_items(self):
        """(name, tensor) pairs in a fixed order; drives hashing and persistence."""
        items = [("embedding", self.embedding), ("pos_embedding", self.pos_embedding)]
        for i, layer in enumerate(self.layers):
            items.extend((f"layer_{i:04d}.{name}", t) for name, t in layer.tensors())
        items.append(("final_norm", self.final_norm))
        items.append(("lm_head", self.lm_head))
        return items

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        header = (
            f"toy:{self.vocab_size}:{self.hidden_dim}:{self.layer_count}:"
            f"{self.head_count}:{self.max_positions}:{self.seed}"
        )
        h.update(header.encode("utf-8"))
        for name, t in self.weight_items():
            h.update(name.encode("utf-8"))
            h.update(t.detach().contiguous().numpy().astype("<f8").tobytes())
        return h.hexdigest()

    def clone(self) -> "ToyModel":
        return ToyModel(
            vocab_size=self.vocab_size,
            hidden_dim=self.hidden_dim,
            layer_count=self.layer_count,
            head_count=self.head_count,
            max_positions=self.max_positions,
            seed=self.seed,
            embedding=self.embedding.detach().clone(),
            pos_embedding=self.pos_embedding.detach().clone(),
            layers=[layer.clone() for layer in self.layers],
            final_norm=self.final_norm.detach().clone(),
            lm_head=self.lm_head.detach().clone(),
        )


@dataclass(frozen=True)
class CalibrationSet:
    """Equal-length token-id rows used for capture and perplexity."""

    token_ids: np.ndarray  # (rows, seq_len) int64

    def __post_init__(self):
        ids = np.array(self.token_ids, dtype=np.int64, copy=True)
        if ids.ndim != 2:
            raise DataError(f"token ids must be 2-d (rows, seq_len), got {ids.ndim} axes")
        if ids.shape[0] < 1:
            raise DataError("at least one sequence required")
        if ids.shape[1] < 2:
            raise DataError(f"sequence length must be >= 2, got {ids.shape[1]}")
        if ids.min(initial=0) < 0:
            raise DataError("negative token id")
        ids.setflags(write=False)
        object.__setattr__(self, "token_ids", ids)

    @property
    def rows(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"calib:{self.rows}:{self.seq_len}".encode("utf-8"))
        h.update(self.token_ids.astype("<i8").tobytes())
        return h.hexdigest()

    @classmethod
    def from_rows(cls, rows) -> "CalibrationSet":
        return cls(np.asarray(rows, dtype=np.int64))

    @classmethod
    def from_bytes(cls, data: bytes, seq_len: int, max_rows=None) -> "CalibrationSet":
        """Chunk a byte stream into full-length rows (token id == byte value)."""
        if seq_len < 2:
            raise DataError(f"sequence length must be >= 2, got {seq_len}")
        full = len(data) // seq_len
        if max_rows is not None:
            full = min(full, max_rows)
        if full < 1:
            raise DataError(f"source holds {len(data)} bytes, not enough for one row of {seq_len}")
        arr = np.frombuffer(data[: full * seq_len], dtype=np.uint8)
        return cls(arr.astype(np.int64).reshape(full, seq_len))

    @staticmethod
    def random(rows: int, seq_len: int, vocab_size: int, seed: int) -> "CalibrationSet":
        rng = np.random.default_rng(seed)
        return CalibrationSet(rng.integers(0, vocab_size, size=(rows, seq_len), dtype=np.int64))


def init_model(
    vocab_size: int,
    hidden_dim: int,
    layer_count: int,
    head_count: int,
    seed: int,
    max_positions: int = 4096,
) -> ToyModel:
    """Deterministically initialize a model; the same seed gives identical weights."""
    if vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2, got {vocab_size}")
    if hidden_dim < 1 or layer_count < 1 or head_count < 1:
        raise ConfigError("hidden_dim, layer_count and head_count must be >= 1")
    if hidden_dim % head_count != 0:
        raise ConfigError(f"hidden_dim {hidden_dim} not divisible by head_count {head_count}")
    if max_positions < 2:
        raise ConfigError(f"max_positions must be >= 2, got {max_positions}")

    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(hidden_dim)

    def draw(*shape):
        return torch.from_numpy(rng.uniform(-bound, bound, size=shape))

    embedding = draw(vocab_size, hidden_dim)
    pos_embedding = draw(max_positions, hidden_dim)
    layers = []
    for _ in range(layer_count):
        layers.append(
            LayerWeights(
                attn_norm=torch.ones(hidden_dim, dtype=torch.float64),
                wq=draw(hidden_dim, hidden_dim),
                wk=draw(hidden_dim, hidden_dim),
                wv=draw(hidden_dim, hidden_dim),
                wo=draw(hidden_dim, hidden_dim),
                mlp_norm=torch.ones(hidden_dim, dtype=torch.float64),
                w_up=draw(hidden_dim, MLP_FACTOR * hidden_dim),
                w_down=draw(MLP_FACTOR * hidden_dim, hidden_dim),
            )
        )
    lm_head = draw(hidden_dim, vocab_size)
    return ToyModel(
        vocab_size=vocab_size,
        hidden_dim=hidden_dim,
        layer_count=layer_count,
        head_count=head_count,
        max_positions=max_positions,
        seed=seed,
        embedding=embedding,
        pos_embedding=pos_embedding,
        layers=layers,
        final_norm=torch.ones(hidden_dim, dtype=torch.float64),
        lm_head=lm_head,
    )


def _rms_norm(x: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + RMS_EPS) * scale


def _causal_mask(seq_len: int) -> torch.Tensor:
    return torch.triu(torch.ones(seq_len, seq_len, dtype=torch.bool), diagonal=1)


def _attention(layer: LayerWeights, x: torch.Tensor, head_count: int, mask: torch.Tensor) -> torch.Tensor:
    b, s, d = x.shape
    hd = d // head_count
    h = _rms_norm(x, layer.attn_norm)
    q = (h @ layer.wq).view(b, s, head_count, hd).transpose(1, 2)
    k = (h @ layer.wk).view(b, s, head_count, hd).transpose(1, 2)
    v = (h @ layer.wv).view(b, s, head_count, hd).transpose(1, 2)
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
    scores = scores.masked_fill(mask, float("-inf"))
    ctx = (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, s, d)
    return ctx @ layer.wo


def _mlp(layer: LayerWeights, x: torch.Tensor) -> torch.Tensor:
    h = _rms_norm(x, layer.mlp_norm)
    return F.gelu(h @ layer.w_up) @ layer.w_down


def apply_layer(model: ToyModel, index: int, x: torch.Tensor) -> torch.Tensor:
    """Run one residual block standalone on a (B, S, D) stream."""
    mask = _causal_mask(x.shape[1])
    layer = model.layers[index]
    x = x + _attention(layer, x, model.head_count, mask)
    x = x + _mlp(layer, x)
    return x


def _ids_tensor(data: CalibrationSet) -> torch.Tensor:
    # token_ids is read-only; torch needs a writable buffer
    return torch.from_numpy(data.token_ids.copy())


def _validate_tokens(model: ToyModel, data: CalibrationSet) -> None:
    top = int(data.token_ids.max())
    if top >= model.vocab_size:
        raise DataError(f"token id {top} >= vocab size {model.vocab_size}")
    if data.seq_len > model.max_positions:
        raise ConfigError(
            f"sequence length {data.seq_len} exceeds max_positions {model.max_positions}"
        )


def _embed(model: ToyModel, ids: torch.Tensor) -> torch.Tensor:
    return model.embedding[ids] + model.pos_embedding[: ids.shape[1]]


def _run_layers(model: ToyModel, x: torch.Tensor, keep, sink=None) -> torch.Tensor:
    """Apply the kept layers in order; optionally collect each boundary."""
    mask = _causal_mask(x.shape[1])
    for i in keep:
        layer = model.layers[i]
        x = x + _attention(layer, x, model.head_count, mask)
        x = x + _mlp(layer, x)
        if sink is not None:
            sink.append(x)
    return x


def _head(model: ToyModel, x: torch.Tensor) -> torch.Tensor:
    return _rms_norm(x, model.final_norm) @ model.lm_head


def forward_capture(model: ToyModel, calib: CalibrationSet):
    """Causal forward pass capturing all L+1 residual-stream boundaries.

    Returns (BoundarySet, logits). Boundary 0 is the embedding-stage output
    (token plus position embeddings, the stream entering layer 0).
    """
    _validate_tokens(model, calib)
    ids = _ids_tensor(calib)
    with torch.no_grad():
        x = _embed(model, ids)
        collected = [x]
        x = _run_layers(model, x, range(model.layer_count), sink=collected)
        logits = _head(model, x)
    boundaries = tuple(TensorF.from_array(t.numpy()) for t in collected)
    return (
        BoundarySet(boundaries, model.fingerprint(), calib.fingerprint()),
        logits,
    )


def _keep_indices(model: ToyModel, plan) -> list:
    if plan is None:
        return list(range(model.layer_count))
    if plan.total_layers != model.layer_count:
        raise PlanError(
            f"plan covers {plan.total_layers} layers but the model has {model.layer_count}"
        )
    pruned = set(plan.pruned_indices)
    return [i for i in range(model.layer_count) if i not in pruned]


def prune_and_forward(model: ToyModel, plan: PruningPlan, data: CalibrationSet) -> torch.Tensor:
    """Forward pass executing only layers outside the plan's prune set."""
    keep = _keep_indices(model, plan)
    _validate_tokens(model, data)
    ids = _ids_tensor(data)
    with torch.no_grad():
        x = _run_layers(model, _embed(model, ids), keep)
        return _head(model, x)


def _nll(logits: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    logp = F.log_softmax(logits[:, :-1, :], dim=-1)
    targets = ids[:, 1:]
    return -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)


def perplexity(model: ToyModel, plan, data: CalibrationSet) -> float:
    """exp of the mean next-token negative log-likelihood (64-bit throughout)."""
    logits = prune_and_forward(model, plan, data)
    ids = _ids_tensor(data)
    return float(torch.exp(_nll(logits, ids).mean()))


def next_token_loss(model: ToyModel, data: CalibrationSet) -> torch.Tensor:
    """Mean next-token NLL as a differentiable scalar (no grad guard)."""
    _validate_tokens(model, data)
    ids = _ids_tensor(data)
    x = _run_layers(model, _embed(model, ids), range(model.layer_count))
    return _nll(_head(model, x), ids).mean()


def training_loss(model: ToyModel, data: CalibrationSet) -> float:
    with torch.no_grad():
        return float(next_token_loss(model, data))


def train_micro(
    model: ToyModel,
    corpus: CalibrationSet,
    steps: int,
    lr: float,
    batch_rows: int = 8,
) -> ToyModel:
    """Plain gradient descent on next-token loss with a fixed batch schedule.

    Step t trains on corpus rows [t*batch_rows, t*batch_rows + batch_rows),
    wrapping around row indices modulo the corpus size. steps=0 returns the
    model unchanged; a non-finite loss raises TrainError.
    """
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    if batch_rows < 1:
        raise ConfigError(f"batch_rows must be >= 1, got {batch_rows}")
    if steps == 0:
        return model
    _validate_tokens(model, corpus)

    work = model.clone()
    params = [t for _, t in work.weight_items()]
    for t in params:
        t.requires_grad_(True)

    all_ids = _ids_tensor(corpus)
    rows = all_ids.shape[0]
    for step in range(steps):
        take = np.arange(step * batch_rows, step * batch_rows + batch_rows) % rows
        batch = all_ids[torch.from_numpy(take)]
        x = _run_layers(work, _embed(work, batch), range(work.layer_count))
        loss = _nll(_head(work, x), batch).mean()
        if not torch.isfinite(loss):
            raise TrainError(f"loss became non-finite at step {step}")
        loss.backward()
        with torch.no_grad():
            for t in params:
                t -= lr * t.grad
                t.grad = None
    for t in params:
        t.requires_grad_(False)
    return work


def _generate_greedy(model: ToyModel, keep, prompts: torch.Tensor, gen_tokens: int) -> torch.Tensor:
    """Greedy decoding with per-layer KV caches; returns (B, prompt+gen) ids."""
    batch, prompt_len = prompts.shape
    total = prompt_len + gen_tokens
    if total > model.max_positions:
        raise ConfigError(
            f"prompt {prompt_len} + generation {gen_tokens} exceeds max_positions {model.max_positions}"
        )
    heads, hd = model.head_count, model.head_dim
    keep = list(keep)
    with torch.no_grad():
        k_cache = [torch.empty(batch, heads, total, hd, dtype=torch.float64) for _ in keep]
        v_cache = [torch.empty(batch, heads, total, hd, dtype=torch.float64) for _ in keep]

        # Prefill over the prompt, recording K/V.
        x = _embed(model, prompts)
        mask = _causal_mask(prompt_len)
        for slot, li in enumerate(keep):
            layer = model.layers[li]
            h = _rms_norm(x, layer.attn_norm)
            q = (h @ layer.wq).view(batch, prompt_len, heads, hd).transpose(1, 2)
            k = (h @ layer.wk).view(batch, prompt_len, heads, hd).transpose(1, 2)
            v = (h @ layer.wv).view(batch, prompt_len, heads, hd).transpose(1, 2)
            k_cache[slot][:, :, :prompt_len] = k
            v_cache[slot][:, :, :prompt_len] = v
            scores = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
            scores = scores.masked_fill(mask, float("-inf"))
            x = x + (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(batch, prompt_len, -1) @ layer.wo
            x = x + _mlp(layer, x)
        logits = _head(model, x[:, -1:, :])
        out = torch.empty(batch, total, dtype=torch.int64)
        out[:, :prompt_len] = prompts
        next_ids = logits.argmax(dim=-1)
        out[:, prompt_len : prompt_len + 1] = next_ids

        for t in range(1, gen_tokens):
            pos = prompt_len + t - 1  # position of the token being fed
            x = model.embedding[next_ids] + model.pos_embedding[pos]
            for slot, li in enumerate(keep):
                layer = model.layers[li]
                h = _rms_norm(x, layer.attn_norm)
                q = (h @ layer.wq).view(batch, 1, heads, hd).transpose(1, 2)
                k_cache[slot][:, :, pos : pos + 1] = (h @ layer.wk).view(batch, 1, heads, hd).transpose(1, 2)
                v_cache[slot][:, :, pos : pos + 1] = (h @ layer.wv).view(batch, 1, heads, hd).transpose(1, 2)
                k = k_cache[slot][:, :, : pos + 1]
                v = v_cache[slot][:, :, : pos + 1]
                scores = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
                x = x + (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(batch, 1, -1) @ layer.wo
                x = x + _mlp(layer, x)
            next_ids = _head(model, x).argmax(dim=-1)
            out[:, prompt_len + t : prompt_len + t + 1] = next_ids
    return out


@dataclass(frozen=True)
class ThroughputReport:
    """Tokens/second for dense and pruned greedy generation in one session."""

    gen_tokens: int
    batch: int
    repeats: int
    prompt_len: int
    pruned_layer_count: int
    dense_tokens_per_s: tuple
    pruned_tokens_per_s: tuple

    @property
    def dense_mean(self) -> float:
        return sum(self.dense_tokens_per_s) / len(self.dense_tokens_per_s)

    @property
    def pruned_mean(self) -> float:
        return sum(self.pruned_tokens_per_s) / len(self.pruned_tokens_per_s)

    @property
    def speedup(self) -> float:
        return self.pruned_mean / self.dense_mean

    def noise_band(self) -> tuple:
        """(dense spread, pruned spread) as max-min over the repeat runs."""
        return (
            max(self.dense_tokens_per_s) - min(self.dense_tokens_per_s),
            max(self.pruned_tokens_per_s) - min(self.pruned_tokens_per_s),
        )


def bench_throughput(
    model: ToyModel,
    plan,
    gen_tokens: int,
    batch: int,
    repeats: int,
    prompt_len: int = 4,
    seed: int = 0,
) -> ThroughputReport:
    """Greedy-generation throughput, pruned vs a dense run in the same session.

    Every repeat regenerates the same tokens; only wall-clock time varies.
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if gen_tokens < 1 or batch < 1 or prompt_len < 1:
        raise ConfigError("gen_tokens, batch and prompt_len must be >= 1")
    keep_pruned = _keep_indices(model, plan)
    keep_dense = list(range(model.layer_count))

    rng = np.random.default_rng(seed)
    prompts = torch.from_numpy(
        rng.integers(0, model.vocab_size, size=(batch, prompt_len), dtype=np.int64)
    )

    def timed(keep) -> float:
        start = time.perf_counter()
        _generate_greedy(model, keep, prompts, gen_tokens)
        return batch * gen_tokens / (time.perf_counter() - start)

    # Full-length warmup for both branches, then interleaved timing so slow
    # drift (allocator, CPU frequency) hits dense and pruned runs alike.
    _generate_greedy(model, keep_dense, prompts, gen_tokens)
    _generate_greedy(model, keep_pruned, prompts, gen_tokens)
    dense_rates, pruned_rates = [], []
    for _ in range(repeats):
        dense_rates.append(timed(keep_dense))
        pruned_rates.append(timed(keep_pruned))
    dense = tuple(dense_rates)
    pruned = tuple(pruned_rates)
    return ThroughputReport(
        gen_tokens=gen_tokens,
        batch=batch,
        repeats=repeats,
        prompt_len=prompt_len,
        pruned_layer_count=model.layer_count - len(keep_pruned),
        dense_tokens_per_s=dense,
        pruned_tokens_per_s=pruned,
    )
