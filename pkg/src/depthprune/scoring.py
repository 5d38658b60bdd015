"""Normalization, fusion, ranking, and prune-set selection.

The raw difference metric is squashed through a sigmoid (so any
non-negative magnitude lands in [0.5, 1)), the dissimilarity is halved
into [0, 1], and the two are blended with a weight alpha. Layers are
ranked by the fused score ascending; the K lowest-ranked form the prune
set.

Ties in the fused score (common near alpha=1, where the sigmoid saturates
to 1.0 for large raw differences) break by raw difference ascending, then
by layer index. Both tie-break activity and saturation are recorded on
the plan so the limitation stays visible.
"""

import math
from dataclasses import dataclass, field

from .errors import PlanError
from .metrics import MetricKind, RawLayerMetrics, layer_raw_metrics
from .tensors import BoundarySet

__all__ = [
    "LayerScore",
    "PruningPlan",
    "normalize_diff",
    "normalize_sim",
    "fuse",
    "score_layers",
    "rank_layers",
    "select_prune_set",
    "build_plan",
    "build_plan_from_metrics",
]

# Tolerance for re-checking stored normalized values against recomputation.
_SCORE_ATOL = 1e-15


def normalize_diff(l_diff: float) -> float:
    """Sigmoid of the raw difference: monotone, maps [0, inf) into [0.5, 1).

    Saturates to exactly 1.0 in 64-bit for inputs above ~36.7; callers that
    care track that via the plan's saturation count.
    """
    l_diff = float(l_diff)
    if not math.isfinite(l_diff) or l_diff < 0.0:
        raise ValueError(f"l_diff must be finite and >= 0, got {l_diff!r}")
    return 1.0 / (1.0 + math.exp(-l_diff))


def normalize_sim(l_sim: float) -> float:
    """Halve the dissimilarity from [0, 2] into [0, 1]."""
    l_sim = float(l_sim)
    if not 0.0 <= l_sim <= 2.0:
        raise ValueError(f"l_sim must lie in [0, 2], got {l_sim!r}")
    return l_sim / 2.0


def fuse(i_diff: float, i_sim: float, alpha: float) -> float:
    """Blend the two normalized scores: alpha weights the difference side."""
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha * float(i_diff) + (1.0 - alpha) * float(i_sim)


@dataclass(frozen=True)
class LayerScore:
    """Raw and normalized readings plus the fused importance for one layer."""

    layer_index: int
    l_sim: float
    l_diff: float
    i_sim: float
    i_diff: float
    importance: float
    alpha: float
    metric_kind: MetricKind

    def __post_init__(self):
        if self.i_sim != self.l_sim / 2.0:
            raise PlanError(f"layer {self.layer_index}: i_sim is not l_sim/2")
        if abs(self.i_diff - normalize_diff(self.l_diff)) > _SCORE_ATOL:
            raise PlanError(f"layer {self.layer_index}: i_diff does not match sigmoid(l_diff)")
        if abs(self.importance - fuse(self.i_diff, self.i_sim, self.alpha)) > _SCORE_ATOL:
            raise PlanError(f"layer {self.layer_index}: importance does not match the fusion")


def score_layers(raws, alpha: float) -> list:
    """Normalize and fuse raw metrics into LayerScore records (input order kept)."""
    scores = []
    for raw in raws:
        i_sim = normalize_sim(raw.l_sim)
        i_diff = normalize_diff(raw.l_diff)
        scores.append(
            LayerScore(
                layer_index=raw.layer_index,
                l_sim=raw.l_sim,
                l_diff=raw.l_diff,
                i_sim=i_sim,
                i_diff=i_diff,
                importance=fuse(i_diff, i_sim, alpha),
                alpha=float(alpha),
                metric_kind=raw.metric_kind,
            )
        )
    return scores


def _check_layer_cover(scores) -> int:
    indices = sorted(s.layer_index for s in scores)
    if not scores or indices != list(range(len(scores))):
        raise PlanError(f"scores must cover layers 0..L-1 exactly once, got indices {indices}")
    return len(scores)


def rank_layers(scores, exclude=frozenset()) -> list:
    """Layer indices sorted by importance ascending.

    Ties break by raw l_diff ascending, then by layer index. Excluded
    layers sort after every candidate (in the same internal order), which
    keeps the prune set a prefix of the ranking.
    """
    total = _check_layer_cover(scores)
    excluded = frozenset(exclude)
    if not all(0 <= i < total for i in excluded):
        raise PlanError(f"excluded indices {sorted(excluded)} outside 0..{total - 1}")
    ordered = sorted(
        scores,
        key=lambda s: (s.layer_index in excluded, s.importance, s.l_diff, s.layer_index),
    )
    return [s.layer_index for s in ordered]


def select_prune_set(ranking, k: int) -> list:
    """The k lowest-ranked layer indices, returned sorted ascending."""
    if not 0 <= k <= len(ranking):
        raise PlanError(f"k={k} outside 0..{len(ranking)}")
    return sorted(ranking[:k])


def _sort_key(score: LayerScore):
    return (score.importance, score.l_diff, score.layer_index)


def _count_tie_breaks(ranking, by_index, excluded) -> int:
    """Adjacent ranked pairs whose fused importance is exactly equal."""
    events = 0
    for a, b in zip(ranking, ranking[1:]):
        if (a in excluded) != (b in excluded):
            continue
        if by_index[a].importance == by_index[b].importance:
            events += 1
    return events


@dataclass(frozen=True)
class PruningPlan:
    """A complete, self-consistent layer-removal decision.

    The ranking is a permutation of all layers; pruned_indices are exactly
    the first k entries of the ranking (stored sorted ascending).
    """

    total_layers: int
    pruned_indices: tuple
    ranking: tuple
    alpha: float
    metric_kind: MetricKind
    calibration_fingerprint: str
    per_layer_scores: tuple
    excluded_indices: tuple = field(default=())
    tie_break_events: int = 0
    saturation_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pruned_indices", tuple(int(i) for i in self.pruned_indices))
        object.__setattr__(self, "ranking", tuple(int(i) for i in self.ranking))
        object.__setattr__(self, "excluded_indices", tuple(int(i) for i in self.excluded_indices))
        object.__setattr__(self, "per_layer_scores", tuple(self.per_layer_scores))
        self._validate()

    @property
    def k(self) -> int:
        return len(self.pruned_indices)

    @property
    def keep_count(self) -> int:
        return self.total_layers - self.k

    def _validate(self):
        total = self.total_layers
        if total < 1:
            raise PlanError(f"total_layers must be >= 1, got {total}")
        if not 0.0 <= self.alpha <= 1.0:
            raise PlanError(f"alpha {self.alpha!r} outside [0, 1]")
        if sorted(self.ranking) != list(range(total)):
            raise PlanError("ranking is not a permutation of 0..L-1")
        if list(self.excluded_indices) != sorted(set(self.excluded_indices)):
            raise PlanError("excluded_indices must be sorted and unique")
        excluded = frozenset(self.excluded_indices)
        if not all(0 <= i < total for i in excluded):
            raise PlanError("excluded index outside 0..L-1")
        k = len(self.pruned_indices)
        if k > total:
            raise PlanError(f"k={k} exceeds {total} layers")
        if list(self.pruned_indices) != sorted(set(self.pruned_indices)):
            raise PlanError("pruned_indices must be sorted and unique")
        if set(self.pruned_indices) != set(self.ranking[:k]):
            raise PlanError("pruned_indices is not the lowest-ranked prefix of the ranking")
        if set(self.pruned_indices) & excluded:
            raise PlanError("pruned_indices overlaps excluded_indices")

        if len(self.per_layer_scores) != total:
            raise PlanError(f"expected {total} score records, got {len(self.per_layer_scores)}")
        by_index = {}
        for position, score in enumerate(self.per_layer_scores):
            if score.layer_index != position:
                raise PlanError("per_layer_scores must be ordered by layer index")
            if score.alpha != self.alpha or score.metric_kind is not self.metric_kind:
                raise PlanError(f"layer {position}: score alpha/metric disagrees with the plan")
            by_index[position] = score

        # Candidates must precede excluded layers, each group sorted by the
        # same (importance, l_diff, index) key.
        flags = [i in excluded for i in self.ranking]
        if flags != sorted(flags):
            raise PlanError("excluded layers must rank after all candidates")
        for a, b in zip(self.ranking, self.ranking[1:]):
            if (a in excluded) == (b in excluded) and _sort_key(by_index[a]) > _sort_key(by_index[b]):
                raise PlanError("ranking is not sorted by (importance, l_diff, index)")

        expected_sat = sum(1 for s in self.per_layer_scores if s.i_diff == 1.0)
        if self.saturation_count != expected_sat:
            raise PlanError(
                f"saturation_count {self.saturation_count} != recomputed {expected_sat}"
            )
        expected_ties = _count_tie_breaks(self.ranking, by_index, excluded)
        if self.tie_break_events != expected_ties:
            raise PlanError(
                f"tie_break_events {self.tie_break_events} != recomputed {expected_ties}"
            )


def build_plan_from_metrics(
    raws,
    alpha: float,
    k: int,
    calibration_fingerprint: str,
    exclude=(),
) -> PruningPlan:
    """Assemble a plan from precomputed raw metrics (one per layer)."""
    if not raws:
        raise PlanError("no layers to score")
    kinds = {raw.metric_kind for raw in raws}
    if len(kinds) != 1:
        raise PlanError(f"mixed metric kinds {sorted(m.value for m in kinds)}")
    scores = score_layers(raws, alpha)
    total = _check_layer_cover(scores)
    scores.sort(key=lambda s: s.layer_index)
    excluded = tuple(sorted(set(int(i) for i in exclude)))
    candidates = total - len(excluded)
    if k > candidates:
        raise PlanError(f"k={k} exceeds the {candidates} candidate layers")
    ranking = rank_layers(scores, frozenset(excluded))
    pruned = select_prune_set(ranking, k)
    by_index = {s.layer_index: s for s in scores}
    return PruningPlan(
        total_layers=total,
        pruned_indices=tuple(pruned),
        ranking=tuple(ranking),
        alpha=float(alpha),
        metric_kind=next(iter(kinds)),
        calibration_fingerprint=calibration_fingerprint,
        per_layer_scores=tuple(scores),
        excluded_indices=excluded,
        tie_break_events=_count_tie_breaks(ranking, by_index, frozenset(excluded)),
        saturation_count=sum(1 for s in scores if s.i_diff == 1.0),
    )


def build_plan(
    boundaries: BoundarySet,
    alpha: float,
    kind: MetricKind,
    k: int,
    exclude=(),
) -> PruningPlan:
    """Score every layer of a boundary set and select the k least important."""
    raws = [layer_raw_metrics(boundaries, i, kind) for i in range(boundaries.layer_count)]
    return build_plan_from_metrics(raws, alpha, k, boundaries.fingerprint(), exclude)
