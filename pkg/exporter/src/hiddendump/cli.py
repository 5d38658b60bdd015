"""CLI: dump hidden states from a checkpoint into a boundary-dump directory."""

import argparse
import sys

from .export import ExportError, ExportJob, export_hidden_states


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiddendump",
        description="Capture per-layer hidden states from a causal LM checkpoint.",
    )
    parser.add_argument("model", help="checkpoint path or model identifier")
    parser.add_argument("--text", required=True, help="calibration text file")
    parser.add_argument("--samples", type=int, default=2, help="sequences to capture (default 2)")
    parser.add_argument("--seqlen", type=int, default=16, help="tokens per sequence (default 16)")
    parser.add_argument("--batch", type=int, default=2, help="forward batch size (default 2)")
    parser.add_argument("--seed", type=int, default=0, help="window-sampling seed (default 0)")
    parser.add_argument("--out", required=True, help="output dump directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        model_id=args.model,
        text_path=args.text,
        samples=args.samples,
        seq_len=args.seqlen,
        batch_size=args.batch,
        out_dir=args.out,
        seed=args.seed,
    )
    try:
        manifest = export_hidden_states(job)
    except (ExportError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 1
    print(
        f"wrote {manifest['layers'] + 1} boundaries "
        f"({manifest['batch']}x{manifest['seq_len']}x{manifest['hidden_dim']}) to {args.out}"
    )
    return 0


def entrypoint() -> None:
    sys.exit(main())
