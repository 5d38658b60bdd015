"""Model-surgery and gradient-check helpers for tests."""

import numpy as np
import torch

from depthprune import LayerWeights, ToyModel, next_token_loss, training_loss
from depthprune.toymodel import MLP_FACTOR


def zero_layer_weights(hidden_dim: int) -> LayerWeights:
    """A block whose attention and MLP outputs are exactly zero."""
    zeros = lambda *shape: torch.zeros(*shape, dtype=torch.float64)
    return LayerWeights(
        attn_norm=torch.ones(hidden_dim, dtype=torch.float64),
        wq=zeros(hidden_dim, hidden_dim),
        wk=zeros(hidden_dim, hidden_dim),
        wv=zeros(hidden_dim, hidden_dim),
        wo=zeros(hidden_dim, hidden_dim),
        mlp_norm=torch.ones(hidden_dim, dtype=torch.float64),
        w_up=zeros(hidden_dim, MLP_FACTOR * hidden_dim),
        w_down=zeros(MLP_FACTOR * hidden_dim, hidden_dim),
    )


def insert_zero_layer(model: ToyModel, position: int) -> ToyModel:
    """Copy of the model with an identity (zero-update) block inserted."""
    out = model.clone()
    out.layers.insert(position, zero_layer_weights(model.hidden_dim))
    out.layer_count = len(out.layers)
    return out


def zero_all_layers(model: ToyModel) -> ToyModel:
    out = model.clone()
    out.layers = [zero_layer_weights(model.hidden_dim) for _ in range(model.layer_count)]
    return out


def finite_diff_grad_check(model, calib, count, seed, step=1e-4):
    """Analytic (autograd) vs central-difference gradients on sampled weights.

    Samples from block weights, the final norm, and the lm head — tensors
    every loss term actually touches; embedding rows for unseen tokens and
    positions beyond the sequence carry an exactly-zero gradient and would
    make a relative comparison meaningless. Returns (name, analytic,
    numeric) triples.
    """
    work = model.clone()
    named = [
        (name, tensor)
        for name, tensor in work.weight_items()
        if name not in ("embedding", "pos_embedding")
    ]
    for _, tensor in named:
        tensor.requires_grad_(True)
    loss = next_token_loss(work, calib)
    loss.backward()

    rng = np.random.default_rng(seed)
    results = []
    for _ in range(count):
        name, tensor = named[int(rng.integers(len(named)))]
        flat = int(rng.integers(tensor.numel()))
        analytic = float(tensor.grad.reshape(-1)[flat])
        with torch.no_grad():
            view = tensor.reshape(-1)
            original = float(view[flat])
            view[flat] = original + step
            upper = training_loss(work, calib)
            view[flat] = original - step
            lower = training_loss(work, calib)
            view[flat] = original
        results.append((f"{name}[{flat}]", analytic, (upper - lower) / (2.0 * step)))
    return results
