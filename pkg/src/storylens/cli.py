"""Command-line front end: one subcommand per pipeline stage plus `run`.

Exit codes: 0 success, 1 runtime failure (including any failed query in a
run), 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .embed_store import StoreError, ingest
from .fusion import FusionConfig, fuse, fused_to_json, ranking_from_json
from .geom_verify import RansacConfig, report_to_json, verify_pair
from .images import load_gray
from .metrics import CaptionItem, QueryResult, RetrievalRun, report
from .pipeline import (
    ConfigError,
    _bundle_to_json,
    dumps_result,
    load_config,
    parse_queries,
    parse_truth,
    run_pipeline,
)
from .providers import HttpProvider, MockProvider, Provider, ProviderConfig, ProviderError
from .text_context import assemble_prompt, build_context, make_document

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _emit(payload: dict | list, out: str | None) -> None:
    text = dumps_result(payload) if isinstance(payload, dict) else (
        json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    )
    _emit_text(text, out)


def _emit_text(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_json_file(path: str, role: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {role} file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{role} file is not valid JSON: {exc}") from exc


def _load_jsonl_file(path: str, role: str) -> list[dict]:
    rows = []
    try:
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        rows.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise ConfigError(
                            f"{role} line {lineno}: invalid JSON: {exc}"
                        ) from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {role} file: {exc}") from exc
    return rows


def _cli_provider(args) -> Provider:
    if args.mock:
        return MockProvider.from_file(args.mock)
    if args.endpoint:
        return HttpProvider(ProviderConfig(endpoint=args.endpoint))
    raise ConfigError("one of --mock or --endpoint is required")


# --- subcommand handlers ----------------------------------------------------


def _cmd_ingest(args) -> int:
    store = ingest(args.input, args.format, normalize=not args.no_normalize)
    if args.store:
        store.export(args.store, args.store_format)
    manifest = store.manifest
    _emit(
        {
            "dimension": manifest.dimension,
            "count": manifest.count,
            "normalized": manifest.normalized,
            "written": args.store,
            "written_format": args.store_format if args.store else None,
        },
        args.out,
    )
    return EXIT_OK


def _cmd_retrieve(args) -> int:
    store = ingest(args.store, args.format, normalize=not args.no_normalize)
    if args.vector:
        try:
            vector = json.loads(args.vector)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--vector is not valid JSON: {exc}") from exc
        hits = store.topk(vector, args.k)
        _emit({"hits": [{"id": h.id, "score": h.score} for h in hits]}, args.out)
        return EXIT_OK
    if not args.queries:
        raise ConfigError("one of --vector or --queries is required")
    results = []
    for i, row in enumerate(_load_jsonl_file(args.queries, "queries"), 1):
        if "vector" not in row:
            raise ConfigError(f"queries line {i}: missing vector")
        hits = store.topk(row["vector"], args.k)
        results.append(
            {
                "query_id": row.get("id", str(i)),
                "hits": [{"id": h.id, "score": h.score} for h in hits],
            }
        )
    _emit(results, args.out)
    return EXIT_OK


def _cmd_fuse(args) -> int:
    payload = _load_json_file(args.rankings, "rankings")
    if not isinstance(payload, list):
        raise ConfigError("rankings file must be a JSON list of model rankings")
    try:
        rankings = [ranking_from_json(obj) for obj in payload]
        config = FusionConfig(
            pool_depth=args.pool_depth, minmax_normalize=args.minmax
        )
        fused = fuse(rankings, config)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"rankings file is malformed: {exc}") from exc
    _emit(fused_to_json(fused), args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    config = RansacConfig(
        iterations=args.iterations,
        reproj_threshold=args.threshold,
        seed=args.seed,
    )
    report_obj = verify_pair(
        load_gray(args.query),
        load_gray(args.candidate),
        config,
        tau=args.tau,
        max_features=args.max_features,
    )
    _emit(report_to_json(report_obj), args.out)
    return EXIT_OK


def _context_bundle(args):
    docs = {row["id"]: row["text"] for row in _load_jsonl_file(args.docs, "documents")}
    if args.doc_id not in docs:
        raise ConfigError(f"document {args.doc_id!r} not in {args.docs}")
    if args.base_caption_file:
        base_caption = Path(args.base_caption_file).read_text(encoding="utf-8").strip()
    elif args.base_caption is not None:
        base_caption = args.base_caption
    else:
        raise ConfigError("one of --base-caption or --base-caption-file is required")
    document = make_document(args.doc_id, docs[args.doc_id])
    bundle = build_context(document, base_caption, _cli_provider(args))
    return bundle, base_caption


def _cmd_context(args) -> int:
    bundle, _ = _context_bundle(args)
    _emit(_bundle_to_json(bundle), args.out)
    return EXIT_OK


def _cmd_prompt(args) -> int:
    bundle, base_caption = _context_bundle(args)
    _emit_text(assemble_prompt(bundle, base_caption, args.template), args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    run = None
    if args.run:
        results = []
        for i, row in enumerate(_load_jsonl_file(args.run, "run"), 1):
            try:
                results.append(
                    QueryResult(
                        query_id=str(row["query_id"]),
                        ranked=tuple(row["ranked"]),
                        truth=frozenset(row["truth"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"run line {i}: {exc}") from exc
        run = RetrievalRun(queries=tuple(results))
    caption_set = None
    if args.captions:
        items = []
        for i, row in enumerate(_load_jsonl_file(args.captions, "captions"), 1):
            try:
                items.append(
                    CaptionItem(
                        candidate=row["candidate"], references=tuple(row["references"])
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"captions line {i}: {exc}") from exc
        caption_set = items
    if run is None and caption_set is None:
        raise ConfigError("one of --run or --captions is required")
    _emit(report(run=run, caption_set=caption_set), args.out)
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_config(args.config, seed=args.seed)
    queries = parse_queries(args.queries)
    truth = parse_truth(args.truth) if args.truth else None
    result = run_pipeline(
        config, queries, truth=truth, top_k=args.top_k, workers=args.workers
    )
    payload = result.to_json()
    _emit(payload, args.out)
    if result.failed:
        sys.stderr.write(f"{len(result.failed)} of {len(queries)} queries failed: "
                         f"{', '.join(result.failed)}\n")
        return EXIT_RUNTIME
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _add_provider_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mock", help="mock provider definition JSON file")
    parser.add_argument("--endpoint", help="HTTP provider base URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storylens",
        description="Retrieval, geometric verification, and caption-context pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load an embedding file and optionally re-export it")
    p.add_argument("input")
    p.add_argument("--format", choices=["jsonl", "packed"], default="jsonl")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--store", help="write the ingested store to this path")
    p.add_argument("--store-format", choices=["jsonl", "packed"], default="packed")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser("retrieve", help="exact cosine top-k against one store")
    p.add_argument("store")
    p.add_argument("--format", choices=["jsonl", "packed"], default="jsonl")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--vector", help="query vector as a JSON array")
    p.add_argument("--queries", help="JSONL of {id, vector} queries")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_retrieve)

    p = sub.add_parser("fuse", help="fuse per-model rankings into one list")
    p.add_argument("rankings", help="JSON list of {model_id, hits: [{id, score}]}")
    p.add_argument("--pool-depth", type=int, default=2)
    p.add_argument("--minmax", action="store_true")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_fuse)

    p = sub.add_parser("verify", help="geometric verification of an image pair")
    p.add_argument("query")
    p.add_argument("candidate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--max-features", type=int, default=500)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_verify)

    for name, handler, extra in (
        ("context", _cmd_context, "extract the context bundle for one document"),
        ("prompt", _cmd_prompt, "render the captioning prompt for one document"),
    ):
        p = sub.add_parser(name, help=extra)
        p.add_argument("--docs", required=True, help="JSONL of {id, text} documents")
        p.add_argument("--doc-id", required=True)
        p.add_argument("--base-caption")
        p.add_argument("--base-caption-file")
        _add_provider_flags(p)
        if name == "prompt":
            p.add_argument("--template", default="default")
        p.add_argument("--out")
        p.set_defaults(handler=handler)

    p = sub.add_parser("eval", help="score a retrieval run and/or captions")
    p.add_argument("--run", help="JSONL of {query_id, ranked, truth}")
    p.add_argument("--captions", help="JSONL of {candidate, references}")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("run", help="full pipeline over a query file")
    p.add_argument("--config", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--truth")
    p.add_argument("--seed", type=int)
    p.add_argument("--top-k", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, StoreError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (ProviderError, ValueError, OSError, RuntimeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
