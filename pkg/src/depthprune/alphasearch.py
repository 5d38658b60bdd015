"""Ternary search for the fusion weight alpha over [0, 1].

Each iteration probes the two interior third-points of the current
interval, keeps the best (alpha, objective) pair seen anywhere, and
discards the third adjacent to the worse probe, so the interval shrinks by
a factor of 2/3 per iteration. The objective here is perplexity of the
model pruned under the plan induced by alpha; it is a step function of
alpha (only the realized prune set matters), so the full trace is recorded
for post-hoc inspection rather than assuming unimodality.
"""

import math
from dataclasses import dataclass

from .errors import ConfigError, SearchError
from .metrics import MetricKind, layer_raw_metrics
from .scoring import build_plan_from_metrics
from .toymodel import CalibrationSet, ToyModel, forward_capture, perplexity

__all__ = [
    "SearchConfig",
    "SearchIteration",
    "SearchTrace",
    "ternary_search",
    "search_alpha_for_model",
    "format_trace",
    "write_trace",
]


@dataclass(frozen=True)
class SearchConfig:
    epsilon: float = 0.01
    max_iterations: int = 20
    k: int = 0
    metric_kind: MetricKind = MetricKind.MSSD

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.k < 0:
            raise ConfigError(f"k must be >= 0, got {self.k}")


@dataclass(frozen=True)
class SearchIteration:
    """One probe pair: interval at iteration start, both midpoint results,
    and the running best after applying them."""

    left: float
    right: float
    m1: float
    m2: float
    ppl1: float
    ppl2: float
    best_alpha: float
    best_ppl: float


@dataclass(frozen=True)
class SearchTrace:
    iterations: tuple
    best_alpha: float
    best_ppl: float
    evaluations: int


def _probe(objective, alpha: float) -> float:
    value = float(objective(alpha))
    if not math.isfinite(value):
        raise SearchError(f"objective returned non-finite value {value!r} at alpha={alpha!r}")
    return value


def ternary_search(objective, config: SearchConfig) -> SearchTrace:
    """Minimize objective over [0, 1] by discarding a third per iteration.

    Stops once the interval width is <= epsilon or max_iterations is hit.
    On equal probes the right endpoint moves, matching the strict
    greater-than branch on the left.
    """
    left, right = 0.0, 1.0
    best_alpha = None
    best_ppl = math.inf
    iterations = []
    evaluations = 0
    count = 0
    while (right - left) > config.epsilon and count < config.max_iterations:
        count += 1
        m1 = left + (right - left) / 3.0
        m2 = right - (right - left) / 3.0
        ppl1 = _probe(objective, m1)
        evaluations += 1
        ppl2 = _probe(objective, m2)
        evaluations += 1
        if ppl1 < best_ppl:
            best_ppl, best_alpha = ppl1, m1
        if ppl2 < best_ppl:
            best_ppl, best_alpha = ppl2, m2
        iterations.append(
            SearchIteration(left, right, m1, m2, ppl1, ppl2, best_alpha, best_ppl)
        )
        if ppl1 > ppl2:
            left = m1
        else:
            right = m2
    return SearchTrace(tuple(iterations), best_alpha, best_ppl, evaluations)


def search_alpha_for_model(
    model: ToyModel,
    calib: CalibrationSet,
    config: SearchConfig,
    ppl_calib: CalibrationSet = None,
    exclude=(),
):
    """Search alpha minimizing pruned-model perplexity; returns (plan, trace).

    Boundaries are captured exactly once (alpha only changes the fusion,
    never the hidden states). Perplexity may be evaluated on a separate,
    typically smaller calibration set; it defaults to the scoring set.
    Distinct alphas that induce the same prune set reuse the cached value,
    since the objective is piecewise constant in alpha.
    """
    if ppl_calib is None:
        ppl_calib = calib
    boundaries, _ = forward_capture(model, calib)
    raws = [
        layer_raw_metrics(boundaries, i, config.metric_kind)
        for i in range(boundaries.layer_count)
    ]
    fingerprint = boundaries.fingerprint()
    ppl_by_prune_set = {}

    def objective(alpha: float) -> float:
        plan = build_plan_from_metrics(raws, alpha, config.k, fingerprint, exclude)
        key = plan.pruned_indices
        if key not in ppl_by_prune_set:
            ppl_by_prune_set[key] = perplexity(model, plan, ppl_calib)
        return ppl_by_prune_set[key]

    trace = ternary_search(objective, config)
    if trace.best_alpha is None:
        raise SearchError(
            f"search performed no iterations (epsilon={config.epsilon} spans the interval)"
        )
    plan = build_plan_from_metrics(raws, trace.best_alpha, config.k, fingerprint, exclude)
    return plan, trace


def format_trace(trace: SearchTrace) -> str:
    """Line-oriented text log: one iteration per line, repr-exact floats."""
    lines = ["# left\tright\tm1\tm2\tppl1\tppl2\tbest_alpha\tbest_ppl"]
    for it in trace.iterations:
        lines.append(
            "\t".join(
                repr(v)
                for v in (it.left, it.right, it.m1, it.m2, it.ppl1, it.ppl2, it.best_alpha, it.best_ppl)
            )
        )
    lines.append(
        f"# best_alpha={trace.best_alpha!r} best_ppl={trace.best_ppl!r} "
        f"evaluations={trace.evaluations}"
    )
    return "\n".join(lines) + "\n"


def write_trace(trace: SearchTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trace(trace))
