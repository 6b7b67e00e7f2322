"""Console entry point: `mose-extract text|images ...`."""

from __future__ import annotations

import argparse
import sys

from .extract import (
    DEFAULT_IMAGE_MODEL,
    DEFAULT_TEXT_MODEL,
    ExtractionError,
    extract_image_features,
    extract_text_features,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mose-extract",
        description="extract entity text/image features into MSEF files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    text = sub.add_parser("text", help="encode entity descriptions")
    text.add_argument("--descriptions", required=True,
                      help="TSV of entity_name<TAB>description")
    text.add_argument("--entities", required=True, help="entity vocabulary TSV")
    text.add_argument("--out", required=True, help="MSEF file to write")
    text.add_argument("--model", default=DEFAULT_TEXT_MODEL,
                      help="encoder checkpoint id or local directory")
    text.add_argument("--batch-size", type=int, default=16)

    images = sub.add_parser("images", help="encode one image per entity")
    images.add_argument("--images", required=True, help="directory of images keyed by entity name")
    images.add_argument("--entities", required=True, help="entity vocabulary TSV")
    images.add_argument("--out", required=True, help="MSEF file to write")
    images.add_argument("--model", default=DEFAULT_IMAGE_MODEL,
                        help="encoder checkpoint id or local directory")
    images.add_argument("--batch-size", type=int, default=8)
    images.add_argument("--threads", type=int, default=4, help="parallel image decoders")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "text":
            report = extract_text_features(
                args.descriptions, args.entities, args.out,
                model=args.model, batch_size=args.batch_size,
            )
        else:
            report = extract_image_features(
                args.images, args.entities, args.out,
                model=args.model, batch_size=args.batch_size, threads=args.threads,
            )
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {report.out_path} ({report.rows}x{report.cols}, "
          f"{len(report.missing)} missing)")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
