"""Bridge entry points: `serve` (stdio responder) and `extract` (batch file mode)."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .extract import batch_extract
from .models import BridgeConfig, BridgeError, ModelLoadFailure
from .server import serve


def _config_from_args(args) -> BridgeConfig:
    return BridgeConfig(
        sentence_model=args.sentence_model,
        causal_model=args.causal_model,
        device=args.device,
        max_seq_len=args.max_seq_len,
        pooling=args.pooling,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsm-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_args(p):
        p.add_argument("--sentence-model", default="builtin:sentence")
        p.add_argument("--causal-model", default="builtin:causal")
        p.add_argument("--device", default="cpu")
        p.add_argument("--max-seq-len", type=int, default=1024)
        p.add_argument("--pooling", choices=["last", "mean"], default="last")

    p = sub.add_parser("serve", help="answer the line-delimited JSON protocol on stdio")
    add_model_args(p)

    p = sub.add_parser("extract", help="write one hidden-state vector per prompt")
    add_model_args(p)
    p.add_argument("--prompts", required=True, help="JSONL file of prompts")
    p.add_argument("--out", required=True, help="matrix file to write")
    p.add_argument("--kind", choices=["sentence", "prompt_hidden"], default="prompt_hidden")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            serve(config=_config_from_args(args))
            return 0
        rows = batch_extract(args.prompts, args.out, _config_from_args(args), kind=args.kind)
        print(f"extract: {rows} vectors -> {args.out}")
        return 0
    except ModelLoadFailure as exc:
        print(f"model load failure: {exc}", file=sys.stderr)
        return 2
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
