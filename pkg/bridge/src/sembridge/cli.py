"""Command-line entry point: `export` embeddings or `serve` the scorer."""

from __future__ import annotations

import argparse
import sys

DEFAULT_EXPORT_MODEL = "sentence-transformers/LaBSE"
DEFAULT_SCORER_MODEL = "sentence-transformers/all-MiniLM-L6-v2"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sembridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p_export = sub.add_parser("export", help="write an EMB1 file for a name file")
    p_export.add_argument("name_file")
    p_export.add_argument("output")
    p_export.add_argument("--model", default=DEFAULT_EXPORT_MODEL)
    p_export.add_argument("--batch-size", type=int, default=64)

    p_serve = sub.add_parser("serve", help="run the stdio similarity scorer")
    p_serve.add_argument("--model", default=DEFAULT_SCORER_MODEL)

    args = parser.parse_args(argv)

    from .encoder import ModelLoadError, load_encoder
    from .export import ExportError, ExportJob, export_embeddings

    try:
        if args.command == "export":
            job = ExportJob(name_file=args.name_file, model=args.model,
                            output=args.output, batch_size=args.batch_size)
            rows = export_embeddings(job)
            print(f"wrote {rows} rows to {args.output}", file=sys.stderr)
            return 0
        encoder = load_encoder(args.model)
        from .serve import serve

        serve(encoder, sys.stdin, sys.stdout)
        return 0
    except (ModelLoadError, ExportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
