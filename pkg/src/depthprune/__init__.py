"""Depth pruning toolkit.

Scores transformer layers from residual-stream boundaries by fusing
representational similarity with transformation-difference magnitude,
searches the fusion weight by ternary search on perplexity, and produces,
serializes, and applies layer-removal plans. A built-in desk-scale
decoder-only transformer provides the end-to-end substrate.
"""

from .alphasearch import (
    SearchConfig,
    SearchIteration,
    SearchTrace,
    format_trace,
    search_alpha_for_model,
    ternary_search,
    write_trace,
)
from .errors import (
    ConfigError,
    DataError,
    DepthPruneError,
    EmptyInputError,
    FormatError,
    IntegrityError,
    LayerIndexError,
    PlanError,
    SearchError,
    ShapeError,
    TrainError,
    VersionError,
)
from .metrics import (
    DEGENERATE_NORM,
    MetricKind,
    RawLayerMetrics,
    cosine_dissimilarity,
    layer_raw_metrics,
    masd,
    mssd,
)
from .scoring import (
    LayerScore,
    PruningPlan,
    build_plan,
    build_plan_from_metrics,
    fuse,
    normalize_diff,
    normalize_sim,
    rank_layers,
    score_layers,
    select_prune_set,
)
from .storage import (
    read_dump,
    read_plan,
    read_sdt,
    load_model,
    plan_from_json,
    plan_to_json,
    save_model,
    write_dump,
    write_plan,
    write_sdt,
)
from .tensors import (
    BoundarySet,
    TensorF,
    TokenMatrix,
    flatten_tokens,
    row_dot,
    row_l2norm,
    unflatten_tokens,
)
from .toymodel import (
    CalibrationSet,
    LayerWeights,
    ThroughputReport,
    ToyModel,
    apply_layer,
    bench_throughput,
    forward_capture,
    init_model,
    next_token_loss,
    perplexity,
    prune_and_forward,
    train_micro,
    training_loss,
)

__version__ = "0.1.0"
