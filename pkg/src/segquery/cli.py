"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 transport error. Machine-readable
output goes to stdout (JSON or JSONL); logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from typing import Iterator, Optional, Sequence

from . import __version__
from .builder import TEMPLATES, BuilderConfig, TrainingSample, build_dataset
from .chunking import (AlignmentError, HttpEndpoint, RetryPolicy, TransportError, oracle_endpoint,
                       run_chunked)
from .core import ManifestError, load_manifest
from .loss import load_fixture, loss_components
from .metrics import EvaluationError, evaluate_predictions
from .parser import extract_query_names, parse_response
from .stats import corpus_stats

log = logging.getLogger("segquery")

EXIT_OK, EXIT_VALIDATION, EXIT_TRANSPORT = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _read_jsonl(path) -> Iterator[dict]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{lineno}: invalid JSON ({exc})") from exc


@contextmanager
def _output(path: Optional[str]):
    if path in (None, "-"):
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w") as fh:
            yield fh


def cmd_build_dataset(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = BuilderConfig(min_sample=args.min_sample, max_sample=args.max_sample,
                        augment_negatives=not args.no_augment, order_consistent=not args.no_order_consistent,
                        template_id=args.template, seed=args.seed)
    with _output(args.out) as out:
        for sample in build_dataset(manifest, cfg, args.per_image, single_target=args.single_target):
            out.write(sample.to_json() + "\n")
    return EXIT_OK


def _endpoint(args, manifest):
    use_oracle = args.oracle or args.oracle_drop is not None or args.oracle_shuffle
    endpoint_url = args.endpoint
    if endpoint_url and use_oracle:
        raise UsageError("--endpoint conflicts with --oracle/--oracle-drop/--oracle-shuffle")
    if use_oracle:
        return oracle_endpoint(manifest, drop_prob=args.oracle_drop or 0.0, seed=args.seed,
                               shuffle=args.oracle_shuffle)
    endpoint_url = endpoint_url or os.environ.get("SEGQUERY_ENDPOINT")
    if not endpoint_url:
        raise UsageError("no endpoint: pass --endpoint URL, --oracle, or set SEGQUERY_ENDPOINT")
    return HttpEndpoint(endpoint_url, timeout=args.timeout)


def cmd_infer(args) -> int:
    manifest = load_manifest(args.manifest)
    endpoint = _endpoint(args, manifest)
    ids = args.classes if args.classes is not None else manifest.table.ids
    unknown = [c for c in ids if c not in manifest.table]
    if unknown:
        raise UsageError(f"unknown class ids: {unknown}")
    retry = RetryPolicy(retries=args.retries, backoff=args.backoff)

    def one(record):
        return run_chunked(record.image_id, ids, manifest.table, endpoint, args.chunk,
                           template_id=args.template, jobs=args.jobs, retry=retry)

    # images run sequentially; --jobs bounds chunk dispatch within an image
    with _output(args.out) as out:
        for record in manifest.records:
            for rec in one(record).to_records():
                out.write(json.dumps(rec) + "\n")
    return EXIT_OK


def cmd_parse(args) -> int:
    manifest = load_manifest(args.manifest)
    with _output(args.out) as out:
        for doc in _read_jsonl(args.input):
            if "query" not in doc or "response" not in doc:
                raise UsageError("each parse input line needs 'query' and 'response'")
            names = extract_query_names(doc["query"])
            if names is None:
                raise UsageError(f"query does not match any template: {doc['query']!r}")
            report = parse_response(doc["response"], names, manifest.table).to_dict()
            if "image_id" in doc:
                report = {"image_id": doc["image_id"], **report}
            out.write(json.dumps(report) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    result = evaluate_predictions(manifest, _read_jsonl(args.pred), args.metric, args.classes)
    print(json.dumps(result))
    return EXIT_OK if result["value"] is not None else EXIT_VALIDATION


def cmd_loss(args) -> int:
    batch, pairs, weights = load_fixture(args.fixture)
    comps = loss_components(batch, pairs, weights)
    comps["weights"] = {"lambda_bce": weights.lambda_bce, "lambda_dice": weights.lambda_dice,
                        "dice_epsilon": weights.dice_epsilon}
    # repr round-trips floats at full precision
    print(json.dumps(comps))
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = load_manifest(args.manifest)
    samples = (TrainingSample.from_dict(d) for d in _read_jsonl(args.corpus))
    print(json.dumps(corpus_stats(samples, manifest.table)))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import make_synthetic_manifest

    path = make_synthetic_manifest(args.out_dir, n_images=args.images, size=args.size,
                                   n_classes=args.classes_count, seed=args.seed)
    print(json.dumps({"manifest": str(path)}))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.manifest, drop_prob=args.oracle_drop, seed=args.seed, shuffle=args.oracle_shuffle)
    uvicorn.run(app, host=args.host, port=args.port, log_level=args.log_level.lower())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="parallelism limit")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = _Parser(prog="segquery", description="Complex-query segmentation toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-dataset", parents=[common], help="emit training JSONL")
    s.add_argument("--manifest", required=True)
    s.add_argument("--per-image", type=int, default=1)
    s.add_argument("--min-sample", type=int, default=3)
    s.add_argument("--max-sample", type=int, default=None)
    s.add_argument("--no-augment", action="store_true", help="omit <NEG> items")
    s.add_argument("--no-order-consistent", action="store_true", help="answer in dataset order")
    s.add_argument("--single-target", action="store_true", help="one existent class per query")
    s.add_argument("--template", type=int, default=0, choices=range(len(TEMPLATES)))
    s.add_argument("--out")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("infer", parents=[common], help="chunked inference, prediction JSONL")
    s.add_argument("--manifest", required=True)
    s.add_argument("--endpoint", help="base URL (default $SEGQUERY_ENDPOINT)")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--oracle-drop", type=float, default=None, metavar="P")
    s.add_argument("--oracle-shuffle", action="store_true")
    s.add_argument("--chunk", default="N", help="N, N/2, N/3, N/4 or an integer chunk size")
    s.add_argument("--classes", type=_int_list, default=None)
    s.add_argument("--template", type=int, default=0, choices=range(len(TEMPLATES)))
    s.add_argument("--retries", type=int, default=2)
    s.add_argument("--backoff", type=float, default=0.1)
    s.add_argument("--timeout", type=float, default=30.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("parse", parents=[common], help="parse {query, response} JSONL")
    s.add_argument("--manifest", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("eval", parents=[common], help="score predictions")
    s.add_argument("--manifest", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--metric", default="miou", choices=["miou", "ciou", "giou"])
    s.add_argument("--classes", type=_int_list, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("loss", parents=[common], help="evaluate a loss fixture")
    s.add_argument("--fixture", required=True)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("stats", parents=[common], help="corpus length statistics")
    s.add_argument("--manifest", required=True)
    s.add_argument("--corpus", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic manifest")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--images", type=int, default=10)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--classes-count", type=int, default=12)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("serve", parents=[common], help="serve the oracle endpoint over HTTP")
    s.add_argument("--manifest", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--oracle-drop", type=float, default=0.0)
    s.add_argument("--oracle-shuffle", action="store_true")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"segquery: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ManifestError, EvaluationError, UsageError, AlignmentError, ValueError, KeyError,
            FileNotFoundError) as exc:
        print(f"segquery: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
