"""Raw per-layer metrics over adjacent residual-stream boundaries.

A layer is judged along two axes:

* how much it rotates each token vector (cosine dissimilarity, scale-blind),
* how large its additive update is, either as the mean squared step per
  token (quadratic, so a few extreme coordinates dominate) or the mean
  absolute step per element (robust to outliers).

All values are accumulated in 64-bit; inputs are never mutated and every
call recomputes from the boundaries.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, LayerIndexError, ShapeError
from .tensors import BoundarySet, TokenMatrix, flatten_tokens

__all__ = [
    "DEGENERATE_NORM",
    "MetricKind",
    "RawLayerMetrics",
    "cosine_dissimilarity",
    "mssd",
    "masd",
    "layer_raw_metrics",
]

# Below the noise floor of 64-bit accumulation a token row is treated as
# directionless: its cosine is defined as 0 and the row is counted.
DEGENERATE_NORM = 1e-12


class MetricKind(enum.Enum):
    """Which difference metric quantifies a layer's update magnitude."""

    MSSD = "mssd"
    MASD = "masd"

    @classmethod
    def from_name(cls, name: str) -> "MetricKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown metric {name!r}; expected 'mssd' or 'masd'") from None


@dataclass(frozen=True)
class RawLayerMetrics:
    """Un-normalized similarity/difference readings for one layer."""

    layer_index: int
    l_sim: float
    l_diff: float
    metric_kind: MetricKind
    degenerate_token_count: int

    def __post_init__(self):
        if self.layer_index < 0:
            raise ValueError(f"negative layer index {self.layer_index}")
        if not 0.0 <= self.l_sim <= 2.0:
            raise ValueError(f"l_sim {self.l_sim!r} outside [0, 2]")
        if not (math.isfinite(self.l_diff) and self.l_diff >= 0.0):
            raise ValueError(f"l_diff {self.l_diff!r} must be finite and >= 0")
        if self.degenerate_token_count < 0:
            raise ValueError("negative degenerate token count")


def _check_pair(h_in: TokenMatrix, h_out: TokenMatrix) -> None:
    if (h_in.rows, h_in.cols) != (h_out.rows, h_out.cols):
        raise ShapeError(
            f"shape mismatch: ({h_in.rows}, {h_in.cols}) vs ({h_out.rows}, {h_out.cols})"
        )
    if h_in.rows == 0:
        raise EmptyInputError("no token rows")


def cosine_dissimilarity(h_in: TokenMatrix, h_out: TokenMatrix) -> tuple:
    """1 minus the mean per-token cosine between input and output rows.

    Returns (value, degenerate_count). A row pair where either side has
    norm below DEGENERATE_NORM contributes cosine 0 and is counted; the
    denominator stays at the full row count. The value is clamped into
    [0, 2] to absorb last-ulp rounding at the ends of the range.
    """
    _check_pair(h_in, h_out)
    a = h_in.to_array()
    b = h_out.to_array()
    dots = np.einsum("ij,ij->i", a, b)
    norm_a = np.sqrt(np.einsum("ij,ij->i", a, a))
    norm_b = np.sqrt(np.einsum("ij,ij->i", b, b))
    degenerate = (norm_a < DEGENERATE_NORM) | (norm_b < DEGENERATE_NORM)
    denom = np.where(degenerate, 1.0, norm_a * norm_b)
    cosines = np.where(degenerate, 0.0, dots / denom)
    value = 1.0 - float(cosines.mean())
    return min(2.0, max(0.0, value)), int(degenerate.sum())


def mssd(h_in: TokenMatrix, h_out: TokenMatrix) -> float:
    """Mean over tokens of the squared L2 norm of the update step.

    Zero iff the two matrices are elementwise identical.
    """
    _check_pair(h_in, h_out)
    diff = h_out.to_array() - h_in.to_array()
    return float(np.einsum("ij,ij->i", diff, diff).mean())


def masd(h_in: TokenMatrix, h_out: TokenMatrix) -> float:
    """Mean absolute update per element (L1 over the hidden dimension,
    averaged over all tokens and dimensions)."""
    _check_pair(h_in, h_out)
    if h_in.cols == 0:
        raise EmptyInputError("no hidden dimensions")
    diff = h_out.to_array() - h_in.to_array()
    return float(np.abs(diff).mean())


def layer_raw_metrics(boundaries: BoundarySet, i: int, kind: MetricKind) -> RawLayerMetrics:
    """Raw metrics for layer i from its two surrounding boundaries."""
    if not 0 <= i < boundaries.layer_count:
        raise LayerIndexError(
            f"layer {i} out of range for {boundaries.layer_count} layers"
        )
    h_in = flatten_tokens(boundaries.boundaries[i])
    h_out = flatten_tokens(boundaries.boundaries[i + 1])
    l_sim, degenerate = cosine_dissimilarity(h_in, h_out)
    l_diff = mssd(h_in, h_out) if kind is MetricKind.MSSD else masd(h_in, h_out)
    return RawLayerMetrics(
        layer_index=i,
        l_sim=l_sim,
        l_diff=l_diff,
        metric_kind=kind,
        degenerate_token_count=degenerate,
    )
