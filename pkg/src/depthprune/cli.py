"""Command-line surface: score, plan, search-alpha, prune, ppl, bench.

Boundary sources are either a precaptured dump directory (--dump), a saved
checkpoint (--model), or a freshly initialized toy model (--toy V,D,L,H
with --seed). All randomness flows through explicit seed flags; given
identical inputs and seeds every subcommand (modulo bench wall-clock
timings) writes byte-identical output. Failures exit nonzero with a single
machine-parseable line on stderr.
"""

import argparse
import math
import sys

from .alphasearch import SearchConfig, search_alpha_for_model, write_trace
from .errors import ConfigError, DepthPruneError
from .metrics import MetricKind, layer_raw_metrics
from .scoring import build_plan, score_layers
from .storage import load_model, read_dump, read_plan, save_model, write_plan
from .toymodel import CalibrationSet, bench_throughput, forward_capture, init_model, perplexity

__all__ = ["main", "entrypoint", "build_parser"]


def _parse_toy(raw: str):
    parts = raw.split(",")
    if len(parts) != 4:
        raise ConfigError(f"--toy expects V,D,L,H (four integers), got {raw!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--toy expects integers, got {raw!r}") from None


def _parse_exclude(raw: str):
    """Ranges like '2-4,7' into a sorted index tuple (inclusive ends)."""
    if not raw:
        return ()
    indices = set()
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk:
            lo_s, hi_s = chunk.split("-", 1)
            try:
                lo, hi = int(lo_s), int(hi_s)
            except ValueError:
                raise ConfigError(f"bad --exclude range {chunk!r}") from None
            if lo > hi or lo < 0:
                raise ConfigError(f"bad --exclude range {chunk!r}")
            indices.update(range(lo, hi + 1))
        else:
            try:
                value = int(chunk)
            except ValueError:
                raise ConfigError(f"bad --exclude index {chunk!r}") from None
            if value < 0:
                raise ConfigError(f"bad --exclude index {chunk!r}")
            indices.add(value)
    return tuple(sorted(indices))


def _resolve_model(args):
    if args.model:
        return load_model(args.model)
    if args.toy:
        vocab, dim, layer_count, heads = _parse_toy(args.toy)
        return init_model(vocab, dim, layer_count, heads, args.seed)
    raise ConfigError("a model source is required (--model or --toy)")


def _resolve_calib(args, vocab_size: int, rows: int) -> CalibrationSet:
    if args.calib:
        with open(args.calib, "rb") as fh:
            return CalibrationSet.from_bytes(fh.read(), args.seq_len, max_rows=rows)
    return CalibrationSet.random(rows, args.seq_len, vocab_size, args.calib_seed)


def _resolve_boundaries(args):
    if args.dump:
        return read_dump(args.dump)
    model = _resolve_model(args)
    calib = _resolve_calib(args, model.vocab_size, args.calib_rows)
    boundaries, _ = forward_capture(model, calib)
    return boundaries


def _resolve_k(args, total_layers: int) -> int:
    if args.k is not None:
        return args.k
    if args.ratio is not None:
        if not 0.0 < args.ratio <= 1.0:
            raise ConfigError(f"--ratio must lie in (0, 1], got {args.ratio}")
        return math.floor(args.ratio * total_layers)
    raise ConfigError("exactly one of --k / --ratio is required")


def _alpha_value(args) -> float:
    if args.alpha == "search":
        raise ConfigError("--alpha search is only valid for 'plan' and 'search-alpha'")
    try:
        return float(args.alpha)
    except ValueError:
        raise ConfigError(f"--alpha expects a number or 'search', got {args.alpha!r}") from None


def _print_score_table(scores):
    print("layer\tl_sim\tl_diff\ti_sim\ti_diff\timportance")
    for s in sorted(scores, key=lambda s: s.layer_index):
        print(
            f"{s.layer_index}\t{s.l_sim!r}\t{s.l_diff!r}\t{s.i_sim!r}\t{s.i_diff!r}\t{s.importance!r}"
        )


def _cmd_score(args) -> int:
    boundaries = _resolve_boundaries(args)
    kind = MetricKind.from_name(args.metric)
    alpha = _alpha_value(args)
    raws = [layer_raw_metrics(boundaries, i, kind) for i in range(boundaries.layer_count)]
    _print_score_table(score_layers(raws, alpha))
    return 0


def _cmd_plan(args) -> int:
    kind = MetricKind.from_name(args.metric)
    exclude = _parse_exclude(args.exclude)
    if args.alpha == "search":
        model = _resolve_model(args)
        calib = _resolve_calib(args, model.vocab_size, args.calib_rows)
        ppl_calib = CalibrationSet(calib.token_ids[: max(1, min(args.ppl_rows, calib.rows))])
        config = SearchConfig(
            epsilon=args.epsilon,
            max_iterations=args.max_iters,
            k=_resolve_k(args, model.layer_count),
            metric_kind=kind,
        )
        plan, trace = search_alpha_for_model(model, calib, config, ppl_calib, exclude)
        if args.trace:
            write_trace(trace, args.trace)
    else:
        boundaries = _resolve_boundaries(args)
        k = _resolve_k(args, boundaries.layer_count)
        plan = build_plan(boundaries, _alpha_value(args), kind, k, exclude)
    if plan.keep_count == 0:
        print("warning: plan removes every layer", file=sys.stderr)
    write_plan(plan, args.out)
    print(f"pruned\t{','.join(str(i) for i in plan.pruned_indices)}")
    print(f"alpha\t{plan.alpha!r}")
    return 0


def _cmd_search_alpha(args) -> int:
    model = _resolve_model(args)
    calib = _resolve_calib(args, model.vocab_size, args.calib_rows)
    ppl_calib = CalibrationSet(calib.token_ids[: max(1, min(args.ppl_rows, calib.rows))])
    config = SearchConfig(
        epsilon=args.epsilon,
        max_iterations=args.max_iters,
        k=_resolve_k(args, model.layer_count),
        metric_kind=MetricKind.from_name(args.metric),
    )
    plan, trace = search_alpha_for_model(
        model, calib, config, ppl_calib, _parse_exclude(args.exclude)
    )
    write_plan(plan, args.out)
    trace_path = args.trace or (str(args.out) + ".trace.txt")
    write_trace(trace, trace_path)
    print(f"alpha_star\t{trace.best_alpha!r}")
    print(f"ppl_star\t{trace.best_ppl!r}")
    print(f"pruned\t{','.join(str(i) for i in plan.pruned_indices)}")
    return 0


def _cmd_prune(args) -> int:
    model = _resolve_model(args)
    plan = read_plan(args.plan)
    if plan.total_layers != model.layer_count:
        raise ConfigError(
            f"plan covers {plan.total_layers} layers but the model has {model.layer_count}"
        )
    pruned = set(plan.pruned_indices)
    slim = model.clone()
    slim.layers = [model.layers[i].clone() for i in range(model.layer_count) if i not in pruned]
    slim.layer_count = len(slim.layers)
    save_model(slim, args.out)
    print(f"kept\t{slim.layer_count}")
    return 0


def _cmd_ppl(args) -> int:
    model = _resolve_model(args)
    calib = _resolve_calib(args, model.vocab_size, args.calib_rows)
    plan = read_plan(args.plan) if args.plan else None
    print(repr(perplexity(model, plan, calib)))
    return 0


def _cmd_bench(args) -> int:
    model = _resolve_model(args)
    plan = read_plan(args.plan) if args.plan else None
    report = bench_throughput(
        model,
        plan,
        gen_tokens=args.gen_tokens,
        batch=args.batch,
        repeats=args.repeats,
        prompt_len=args.prompt_len,
        seed=args.seed,
    )
    print("run\tdense_tok_per_s\tpruned_tok_per_s")
    for i, (dense, pruned) in enumerate(
        zip(report.dense_tokens_per_s, report.pruned_tokens_per_s)
    ):
        print(f"{i}\t{dense:.2f}\t{pruned:.2f}")
    dense_band, pruned_band = report.noise_band()
    print(f"mean\t{report.dense_mean:.2f}\t{report.pruned_mean:.2f}")
    print(f"noise_band\t{dense_band:.2f}\t{pruned_band:.2f}")
    print(f"speedup\t{report.speedup:.4f}x\t(pruned_layers={report.pruned_layer_count})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthprune",
        description="Score transformer layers from residual-stream boundaries and plan layer removal.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--dump", help="boundary dump directory (precaptured hidden states)")
    source.add_argument("--model", help="toy-model checkpoint directory")
    source.add_argument("--toy", help="initialize a toy model: V,D,L,H (e.g. 256,64,12,4)")
    source.add_argument("--seed", type=int, default=0, help="seed for toy init / benchmarks (default 0)")
    source.add_argument("--calib", help="calibration bytes file (token id == byte value)")
    source.add_argument("--calib-rows", type=int, default=32, help="calibration sequences (default 32)")
    source.add_argument("--seq-len", type=int, default=256, help="calibration sequence length (default 256)")
    source.add_argument("--calib-seed", type=int, default=0, help="seed for synthesized calibration data")

    metric = argparse.ArgumentParser(add_help=False)
    metric.add_argument("--metric", choices=["mssd", "masd"], default="mssd", help="difference metric")

    selection = argparse.ArgumentParser(add_help=False)
    group = selection.add_mutually_exclusive_group(required=True)
    group.add_argument("--k", type=int, help="number of layers to prune")
    group.add_argument("--ratio", type=float, help="fraction of layers to prune; K = floor(ratio*L)")
    selection.add_argument("--exclude", default="", help="layer ranges excluded from pruning, e.g. 0-1,11")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--epsilon", type=float, default=0.01, help="search precision (default 0.01)")
    search.add_argument("--max-iters", type=int, default=20, help="search iteration cap (default 20)")
    search.add_argument("--ppl-rows", type=int, default=8, help="rows of the perplexity subset (default 8)")

    p_score = sub.add_parser("score", parents=[source, metric], help="print the per-layer score table")
    p_score.add_argument("--alpha", default="0.5", help="fusion weight for the importance column (default 0.5)")
    p_score.set_defaults(func=_cmd_score)

    p_plan = sub.add_parser("plan", parents=[source, metric, selection, search], help="build a pruning plan")
    p_plan.add_argument("--alpha", required=True, help="fusion weight in [0,1], or 'search'")
    p_plan.add_argument("--out", required=True, help="plan JSON output path")
    p_plan.add_argument("--trace", help="search trace output path (with --alpha search)")
    p_plan.set_defaults(func=_cmd_plan)

    p_search = sub.add_parser(
        "search-alpha", parents=[source, metric, selection, search], help="ternary-search alpha on perplexity"
    )
    p_search.add_argument("--out", required=True, help="plan JSON output path")
    p_search.add_argument("--trace", help="trace log path (default: <out>.trace.txt)")
    p_search.set_defaults(func=_cmd_search_alpha)

    p_prune = sub.add_parser("prune", parents=[source], help="apply a plan to a checkpoint")
    p_prune.add_argument("--plan", required=True, help="plan JSON path")
    p_prune.add_argument("--out", required=True, help="pruned checkpoint output directory")
    p_prune.set_defaults(func=_cmd_prune)

    p_ppl = sub.add_parser("ppl", parents=[source], help="print perplexity (optionally under a plan)")
    p_ppl.add_argument("--plan", help="plan JSON path (omit for the dense model)")
    p_ppl.set_defaults(func=_cmd_ppl)

    p_bench = sub.add_parser("bench", parents=[source], help="tokens/second, pruned vs dense")
    p_bench.add_argument("--plan", help="plan JSON path (omit to bench dense vs dense)")
    p_bench.add_argument("--gen-tokens", type=int, default=256, help="tokens generated per run (default 256)")
    p_bench.add_argument("--batch", type=int, default=16, help="generation batch size (default 16)")
    p_bench.add_argument("--repeats", type=int, default=10, help="timed repeats (default 10)")
    p_bench.add_argument("--prompt-len", type=int, default=4, help="prompt length (default 4)")
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DepthPruneError, ValueError, OSError) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
