"""Dense float64 arrays and the row reductions every metric is built on.

Payloads are stored flat in row-major order and validated to be finite at
construction. All reductions accumulate in 64-bit regardless of how the
values were stored on disk; that contract is what makes the metric
tolerances downstream meaningful.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "TensorF",
    "TokenMatrix",
    "BoundarySet",
    "flatten_tokens",
    "unflatten_tokens",
    "row_dot",
    "row_l2norm",
]


def _flat_float64(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ShapeError(f"payload must be a flat sequence, got {arr.ndim} axes")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite element in payload")
    arr.setflags(write=False)
    return arr


class TensorF:
    """Rank-N dense array: explicit dims plus a read-only row-major payload."""

    __slots__ = ("dims", "data")

    def __init__(self, dims, data):
        dims = tuple(int(d) for d in dims)
        if any(d < 0 for d in dims):
            raise ShapeError(f"negative dimension in {dims}")
        arr = _flat_float64(data)
        expected = math.prod(dims)
        if arr.size != expected:
            raise ShapeError(f"dims {dims} imply {expected} elements, got {arr.size}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("TensorF is immutable")

    @classmethod
    def from_array(cls, array) -> "TensorF":
        arr = np.asarray(array, dtype=np.float64)
        return cls(arr.shape, arr.ravel(order="C"))

    def to_array(self) -> np.ndarray:
        """Read-only N-d view of the payload."""
        return self.data.reshape(self.dims)

    @property
    def rank(self) -> int:
        return len(self.dims)

    def __eq__(self, other):
        if not isinstance(other, TensorF):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.dims, self.data.tobytes()))

    def __repr__(self):
        return f"TensorF(dims={self.dims})"


class TokenMatrix:
    """Flattened per-token view: B*S rows of hidden width D, row-major."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows, cols, data):
        rows, cols = int(rows), int(cols)
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative shape ({rows}, {cols})")
        arr = _flat_float64(data)
        if arr.size != rows * cols:
            raise ShapeError(f"shape ({rows}, {cols}) implies {rows * cols} elements, got {arr.size}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("TokenMatrix is immutable")

    @classmethod
    def from_array(cls, array) -> "TokenMatrix":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-d array, got {arr.ndim} axes")
        return cls(arr.shape[0], arr.shape[1], arr.ravel(order="C"))

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.rows, self.cols)

    def row(self, j: int) -> np.ndarray:
        if not 0 <= j < self.rows:
            raise IndexError(f"row {j} out of range for {self.rows} rows")
        return self.data[j * self.cols : (j + 1) * self.cols]

    def __eq__(self, other):
        if not isinstance(other, TokenMatrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.data, other.data)
        )

    def __hash__(self):
        return hash((self.rows, self.cols, self.data.tobytes()))

    def __repr__(self):
        return f"TokenMatrix(rows={self.rows}, cols={self.cols})"


def flatten_tokens(h: TensorF) -> TokenMatrix:
    """Reshape a [B, S, D] tensor into B*S token rows.

    Row j of the result equals h[j // S, j % S, :]; the payload bytes are
    untouched, so the reshape is a bijection on elements.
    """
    if h.rank != 3:
        raise ShapeError(f"expected 3 dims [B, S, D], got {h.dims}")
    b, s, d = h.dims
    return TokenMatrix(b * s, d, h.data)


def unflatten_tokens(m: TokenMatrix, batch: int, seq: int) -> TensorF:
    """Inverse of flatten_tokens for the given batch/sequence split."""
    if batch * seq != m.rows:
        raise ShapeError(f"batch {batch} x seq {seq} != {m.rows} rows")
    return TensorF((batch, seq, m.cols), m.data)


def _check_same_shape(a: TokenMatrix, b: TokenMatrix) -> None:
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ShapeError(
            f"shape mismatch: ({a.rows}, {a.cols}) vs ({b.rows}, {b.cols})"
        )


def row_dot(a: TokenMatrix, b: TokenMatrix, j: int) -> float:
    """Dot product of row j from each matrix, accumulated in 64-bit."""
    _check_same_shape(a, b)
    return float(np.dot(a.row(j), b.row(j)))


def row_l2norm(a: TokenMatrix, j: int) -> float:
    """Euclidean norm of row j; zero iff every element of the row is zero."""
    return math.sqrt(float(np.dot(a.row(j), a.row(j))))


@dataclass(frozen=True)
class BoundarySet:
    """The L+1 residual-stream boundaries captured for one calibration batch.

    boundaries[0] is the embedding-stage output; boundaries[i+1] is the
    stream after layer i. All entries share one [B, S, D] shape.
    """

    boundaries: tuple
    model_fingerprint: str
    calib_fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        if len(self.boundaries) < 2:
            raise ShapeError("a boundary set needs at least 2 boundaries (1 layer)")
        first = self.boundaries[0]
        for t in self.boundaries:
            if not isinstance(t, TensorF):
                raise ShapeError("boundaries must be TensorF instances")
            if t.rank != 3:
                raise ShapeError(f"boundary must be [B, S, D], got {t.dims}")
            if t.dims != first.dims:
                raise ShapeError(f"inconsistent boundary shapes {first.dims} vs {t.dims}")

    @property
    def layer_count(self) -> int:
        return len(self.boundaries) - 1

    @property
    def token_shape(self) -> tuple:
        """(B, S, D) shared by every boundary."""
        return self.boundaries[0].dims

    def fingerprint(self) -> str:
        """Content hash identifying the (model, calibration) source pair."""
        h = hashlib.sha256()
        h.update(self.model_fingerprint.encode("utf-8"))
        h.update(b"\n")
        h.update(self.calib_fingerprint.encode("utf-8"))
        return h.hexdigest()
