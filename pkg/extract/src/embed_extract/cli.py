"""Command-line wrapper around the extraction pipeline."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .extract import ExtractionManifest, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="Embed an image directory tree into a CEF file.",
    )
    parser.add_argument("--checkpoint", default="torchvision:resnet18",
                        help="'torchvision:<name>' or 'hf-clip:<model-id>'")
    parser.add_argument("--images", type=Path, required=True, help="image root directory")
    parser.add_argument("--out", type=Path, required=True, help="output .cef path")
    parser.add_argument("--labels", choices=["from-subdirs", "none"], default="from-subdirs")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--weights", default=None,
                        help="'default' for published weights, or a state-dict path")
    parser.add_argument("--drop-last-classes", type=int, default=0,
                        help="omit the last n classes (alphabetical) to build a source split")
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    manifest = ExtractionManifest(
        checkpoint=args.checkpoint,
        image_root=args.images,
        output_path=args.out,
        label_mode=args.labels,
        batch_size=args.batch_size,
        device=args.device,
        weights=args.weights,
        drop_last_classes=args.drop_last_classes,
        seed=args.seed,
    )
    try:
        result = extract(manifest)
    except (RuntimeError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = f"wrote {result.written} embeddings to {args.out}"
    if result.class_names:
        summary += f" ({len(result.class_names)} classes)"
    if result.skipped:
        summary += f", skipped {len(result.skipped)} images"
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
