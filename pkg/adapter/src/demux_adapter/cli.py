"""demux-extract: JSONL corpus in, engine dataset directory out.

Input records are one JSON object per line with fields
{id, language, text} (sequence/token tasks) or
{id, language, question, context} (span extraction).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import AdapterError
from .extract import TASKS, AdapterConfig, extract


def read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}:{line_no}: {exc}") from exc
    return records


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demux-extract",
        description="Extract representations and output distributions from a "
                    "transformer checkpoint into a demux dataset directory.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--model", metavar="PATH", required=True,
                        help="checkpoint path or identifier (str)")
    parser.add_argument("--task", metavar="NAME", required=True, choices=TASKS,
                        help="task head to load (str)")
    parser.add_argument("--input", metavar="FILE", required=True,
                        help="JSONL corpus with language tags (str)")
    parser.add_argument("--out", metavar="DIR", required=True,
                        help="output dataset directory (str)")
    parser.add_argument("--raw", action="store_true",
                        help="emit raw token embeddings and alignments instead "
                             "of pooled vectors")
    parser.add_argument("--max-len", metavar="INT", type=int, default=128,
                        help="maximum sequence length; longer inputs are "
                             "truncated and counted (int)")
    parser.add_argument("--batch-size", metavar="INT", type=int, default=16,
                        help="inference batch size (int)")
    parser.add_argument("--device", metavar="NAME", default="cpu",
                        help="torch device (str)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        records = read_jsonl(Path(args.input))
        config = AdapterConfig(
            model=args.model, task=args.task, out_dir=Path(args.out),
            batch_size=args.batch_size, device=args.device,
            max_length=args.max_len, raw=args.raw,
        )
        out = extract(config, records)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out} ({len(records)} examples)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
