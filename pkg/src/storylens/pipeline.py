"""End-to-end orchestration: retrieve, fuse, verify, contextualize, caption.

The pipeline wires the other modules together behind one JSON config file.
Every stage's output is JSON-ready and deterministic for a fixed seed and
mock providers, so full-run dumps can be compared byte for byte.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import jsonschema

from .embed_store import EmbeddingStore, ingest
from .fusion import FusionConfig, ModelRanking, fuse, fused_to_json, ranking_to_json
from .geom_verify import (
    RansacConfig,
    confidence_and_decision,
    report_to_json,
    verify_pair,
)
from .images import load_gray
from .metrics import CaptionItem, QueryResult, RetrievalRun, report
from .providers import (
    CaptionResult,
    HttpProvider,
    MockProvider,
    Provider,
    ProviderConfig,
    ProviderError,
)
from .text_context import ContextBundle, assemble_prompt, build_context, make_document

DEFAULT_RETRIES = 2
DEFAULT_RETRY_BASE_MS = 250.0
DEFAULT_TOP_K = 2
VERIFY_TOP = 2  # pairwise rerank compares the top two fused candidates

# Prompt sent to the caption provider when no base-caption file covers a
# query. Mock fixtures plant per-query captions keyed by this exact text.
BASE_CAPTION_REQUEST = (
    'Describe the photograph "{query_id}" in one factual sentence, '
    "covering only what is visible."
)


class ConfigError(ValueError):
    """Invalid configuration or input file; maps to CLI exit code 2."""


_PROVIDER_SCHEMA = {
    "type": "object",
    "oneOf": [{"required": ["mock"]}, {"required": ["endpoint"]}],
    "additionalProperties": False,
    "properties": {
        "mock": {"type": "string", "minLength": 1},
        "endpoint": {"type": "string", "minLength": 1},
        "timeout_ms": {"type": "integer", "minimum": 1},
        "auth_token_env": {"type": "string", "minLength": 1},
        "model_hint": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["stores", "documents", "providers"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "stores": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["model_id", "path"],
                "additionalProperties": False,
                "properties": {
                    "model_id": {"type": "string", "minLength": 1},
                    "path": {"type": "string", "minLength": 1},
                    "format": {"enum": ["jsonl", "packed"]},
                    "normalize": {"type": "boolean"},
                    "provider": _PROVIDER_SCHEMA,
                },
            },
        },
        "documents": {"type": "string", "minLength": 1},
        "links": {"type": "string", "minLength": 1},
        "base_captions": {"type": "string", "minLength": 1},
        "providers": {
            "type": "object",
            "required": ["text"],
            "additionalProperties": False,
            "properties": {
                "text": _PROVIDER_SCHEMA,
                "caption": _PROVIDER_SCHEMA,
            },
        },
        "fusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "position_weights": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number"},
                },
                "consensus_bonus": {"type": "number"},
                "pool_depth": {"type": "integer", "minimum": 1},
                "minmax_normalize": {"type": "boolean"},
            },
        },
        "ransac": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": {"type": "integer", "minimum": 1},
                "reproj_threshold": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "min_matches": {"type": "integer", "minimum": 4},
            },
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_features": {"type": "integer", "minimum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pool": {"type": "integer", "minimum": 2},
            },
        },
        "retries": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "base_delay_ms": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "generate_captions": {"type": "boolean"},
        "max_caption_words": {"type": "integer", "minimum": 1},
    },
}


def with_retries(
    fn: Callable,
    retries: int = DEFAULT_RETRIES,
    base_delay_ms: float = DEFAULT_RETRY_BASE_MS,
    sleep: Callable[[float], None] = time.sleep,
):
    """Call fn, retrying provider errors with exponential backoff.

    Providers never retry internally, so this is the single retry point.
    Delays are base, 2*base, 4*base, ... seconds-converted; the last error
    propagates unchanged after `retries` re-attempts.
    """
    if retries < 0:
        raise ValueError("retries must be >= 0")
    attempt = 0
    while True:
        try:
            return fn()
        except ProviderError:
            if attempt >= retries:
                raise
            sleep(base_delay_ms * (2.0**attempt) / 1000.0)
            attempt += 1


@dataclass(frozen=True)
class StoreHandle:
    model_id: str
    store: EmbeddingStore
    provider: Provider | None


@dataclass(frozen=True)
class PipelineConfig:
    """Validated runtime configuration; all paths already resolved."""

    stores: tuple[StoreHandle, ...]
    documents: dict[str, str]
    links: dict[str, dict]
    base_captions: dict[str, str]
    text_provider: Provider
    caption_provider: Provider | None
    fusion: FusionConfig
    ransac: RansacConfig
    max_features: int = 500
    tau: float = 0.7
    verify_pool: int = VERIFY_TOP
    retries: int = DEFAULT_RETRIES
    retry_base_ms: float = DEFAULT_RETRY_BASE_MS
    generate_captions: bool = False
    max_caption_words: int = 350
    seed: int = 0
    output_dir: Path | None = None
    base_dir: Path = field(default_factory=Path)


def _schema_check(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        first = errors[0]
        raise ConfigError(f"config invalid at {first.json_path}: {first.message}")


def _require_file(path: Path, role: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{role} file not found: {path}")
    return path


def _make_provider(obj: dict, base_dir: Path) -> Provider:
    if "mock" in obj:
        return MockProvider.from_file(_require_file(base_dir / obj["mock"], "mock provider"))
    return HttpProvider(
        ProviderConfig(
            endpoint=obj["endpoint"],
            timeout_ms=obj.get("timeout_ms", 30000),
            auth_token_env=obj.get("auth_token_env"),
            model_hint=obj.get("model_hint"),
        )
    )


def _read_jsonl(path: Path, role: str) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{role} line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ConfigError(f"{role} line {lineno}: expected an object")
            rows.append(obj)
    return rows


def load_config(path: str | Path, seed: int | None = None) -> PipelineConfig:
    """Parse, schema-validate, and materialize a pipeline config file.

    Relative paths inside the file resolve against the file's directory.
    `seed` overrides the file's seed (and the RANSAC seed unless the file
    pins one explicitly).
    """
    path = _require_file(Path(path), "config")
    base = path.parent
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _schema_check(raw)

    effective_seed = seed if seed is not None else raw.get("seed", 0)

    handles = []
    seen_models: set[str] = set()
    for i, entry in enumerate(raw["stores"]):
        model_id = entry["model_id"]
        if model_id in seen_models:
            raise ConfigError(f"config invalid at $.stores[{i}].model_id: duplicate {model_id!r}")
        seen_models.add(model_id)
        store_path = _require_file(base / entry["path"], f"store {model_id!r}")
        store = ingest(store_path, entry.get("format", "jsonl"), entry.get("normalize", True))
        provider = _make_provider(entry["provider"], base) if "provider" in entry else None
        dim = store.manifest.dimension
        if isinstance(provider, MockProvider) and provider.dim != dim:
            raise ConfigError(
                f"store {model_id!r} dimension {dim} != its provider dimension {provider.dim}"
            )
        handles.append(StoreHandle(model_id=model_id, store=store, provider=provider))

    docs_path = _require_file(base / raw["documents"], "documents")
    documents: dict[str, str] = {}
    for row in _read_jsonl(docs_path, "documents"):
        if "id" not in row or "text" not in row:
            raise ConfigError(f"documents: every row needs id and text, got {sorted(row)}")
        if row["id"] in documents:
            raise ConfigError(f"documents: duplicate id {row['id']!r}")
        documents[row["id"]] = row["text"]

    links: dict[str, dict] = {}
    if "links" in raw:
        links_path = _require_file(base / raw["links"], "links")
        links = json.loads(links_path.read_text(encoding="utf-8"))
        if not isinstance(links, dict):
            raise ConfigError("links file must be a JSON object keyed by article id")

    base_captions: dict[str, str] = {}
    if "base_captions" in raw:
        for row in _read_jsonl(_require_file(base / raw["base_captions"], "base captions"),
                               "base captions"):
            base_captions[row["id"]] = row["caption"]

    fusion_raw = raw.get("fusion", {})
    fusion_kwargs = {}
    if "position_weights" in fusion_raw:
        fusion_kwargs["position_weights"] = tuple(fusion_raw["position_weights"])
    for key in ("consensus_bonus", "pool_depth", "minmax_normalize"):
        if key in fusion_raw:
            fusion_kwargs[key] = fusion_raw[key]
    try:
        fusion_config = FusionConfig(**fusion_kwargs)
    except ValueError as exc:
        raise ConfigError(f"config invalid at $.fusion: {exc}") from exc

    ransac_raw = dict(raw.get("ransac", {}))
    ransac_raw.setdefault("seed", effective_seed)
    try:
        ransac_config = RansacConfig(**ransac_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config invalid at $.ransac: {exc}") from exc

    retries_raw = raw.get("retries", {})
    providers_raw = raw["providers"]
    caption_provider = (
        _make_provider(providers_raw["caption"], base) if "caption" in providers_raw else None
    )
    detector = raw.get("detector", {})
    return PipelineConfig(
        stores=tuple(handles),
        documents=documents,
        links=links,
        base_captions=base_captions,
        text_provider=_make_provider(providers_raw["text"], base),
        caption_provider=caption_provider,
        fusion=fusion_config,
        ransac=ransac_config,
        max_features=detector.get("max_features", 500),
        tau=detector.get("tau", 0.7),
        verify_pool=raw.get("verify", {}).get("pool", VERIFY_TOP),
        retries=retries_raw.get("count", DEFAULT_RETRIES),
        retry_base_ms=retries_raw.get("base_delay_ms", DEFAULT_RETRY_BASE_MS),
        generate_captions=raw.get("generate_captions", False),
        max_caption_words=raw.get("max_caption_words", 350),
        seed=effective_seed,
        output_dir=(base / raw["output_dir"]) if "output_dir" in raw else None,
        base_dir=base,
    )


def parse_queries(path: str | Path) -> list[dict]:
    """Load the query JSONL: {"id", optional "image", "vector" or "vectors"}."""
    path = _require_file(Path(path), "queries")
    queries = []
    seen: set[str] = set()
    for i, row in enumerate(_read_jsonl(path, "queries"), 1):
        if "id" not in row or not isinstance(row["id"], str) or not row["id"]:
            raise ConfigError(f"queries line {i}: missing non-empty string id")
        if row["id"] in seen:
            raise ConfigError(f"queries line {i}: duplicate id {row['id']!r}")
        seen.add(row["id"])
        row["_dir"] = str(path.parent)  # image paths resolve against the queries file
        queries.append(row)
    return queries


def parse_truth(path: str | Path) -> dict[str, dict]:
    """Load ground truth JSONL: {"query_id", "truth": [...], "references": [...]}."""
    truth: dict[str, dict] = {}
    for i, row in enumerate(_read_jsonl(_require_file(Path(path), "truth"), "truth"), 1):
        if "query_id" not in row or "truth" not in row:
            raise ConfigError(f"truth line {i}: needs query_id and truth")
        if not row["truth"]:
            raise ConfigError(f"truth line {i}: truth set must be non-empty")
        truth[row["query_id"]] = {
            "truth": [str(t) for t in row["truth"]],
            "references": [str(r) for r in row.get("references", [])],
        }
    return truth


class _StageFailure(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _bundle_to_json(bundle: ContextBundle) -> dict:
    return {
        "lead": list(bundle.lead),
        "tail": list(bundle.tail),
        "chunks": [
            {
                "start_sentence": c.start_sentence,
                "end_sentence": c.end_sentence,
                "text": c.text,
                "similarity": c.similarity,
            }
            for c in bundle.top_chunks
        ],
        "entities": list(bundle.entities.entities),
        "n_sentences": bundle.n_sentences,
    }


def _caption_to_json(result: CaptionResult) -> dict:
    return {
        "text": result.text,
        "word_count": result.word_count,
        "length_advisory": result.length_advisory,
    }


def _query_vector(query: dict, handle: StoreHandle, config: PipelineConfig) -> list[float]:
    vectors = query.get("vectors")
    if vectors is not None:
        if handle.model_id not in vectors:
            raise _StageFailure(
                "embed", f"query {query['id']!r} has no vector for model {handle.model_id!r}"
            )
        return vectors[handle.model_id]
    if "vector" in query:
        return query["vector"]
    if "image" in query:
        if handle.provider is None:
            raise _StageFailure(
                "embed",
                f"query {query['id']!r} is an image but store {handle.model_id!r} "
                "has no provider to embed it",
            )
        image_path = Path(query["_dir"]) / query["image"]
        try:
            image_bytes = image_path.read_bytes()
        except OSError as exc:
            raise _StageFailure("embed", f"cannot read query image {image_path}: {exc}") from exc
        return with_retries(
            lambda: handle.provider.embed_image(image_bytes),
            config.retries,
            config.retry_base_ms,
        )
    raise _StageFailure(
        "embed", f"query {query['id']!r} supplies neither vectors nor an image"
    )


def _load_image(path: Path, role: str):
    try:
        return load_gray(path)
    except (OSError, ValueError) as exc:
        raise _StageFailure("verify", f"cannot load {role} image {path}: {exc}") from exc


def _verify_candidates(query: dict, ranked_ids: list[str],
                       config: PipelineConfig) -> tuple[dict | None, list[str]]:
    """Geometric check of the top fused candidates; (None, order) when skipped.

    Verification runs only when the query and every pooled candidate declare
    image paths; otherwise the fused order stands (embedding-only corpora).
    With the default pool of 2 this is a single rank-1 vs rank-2 comparison;
    a larger pool lets each later candidate challenge the current leader in
    fused order, moving to the front when it wins.
    """
    pool = min(config.verify_pool, len(ranked_ids))
    if pool < 2 or "image" not in query or not query["image"]:
        return None, ranked_ids
    candidate_paths = []
    for cand_id in ranked_ids[:pool]:
        link = config.links.get(cand_id) or {}
        if not link.get("image"):
            return None, ranked_ids
        candidate_paths.append(config.base_dir / link["image"])
    query_image = _load_image(Path(query["_dir"]) / query["image"], "query")
    reports = {
        cand_id: verify_pair(
            query_image,
            _load_image(p, f"candidate {cand_id!r}"),
            config.ransac,
            tau=config.tau,
            max_features=config.max_features,
        )
        for cand_id, p in zip(ranked_ids[:pool], candidate_paths)
    }
    order = list(ranked_ids)
    decisions = []
    for challenger in ranked_ids[1:pool]:
        incumbent = order[0]
        confidence, rerank = confidence_and_decision(
            reports[incumbent].scores, reports[challenger].scores
        )
        decisions.append(
            {
                "challenger": challenger,
                "incumbent": incumbent,
                "confidence": confidence,
                "rerank": rerank,
            }
        )
        if rerank:
            order.remove(challenger)
            order.insert(0, challenger)
    verification = {
        "pool": ranked_ids[:pool],
        "reports": [report_to_json(reports[c]) for c in ranked_ids[:pool]],
        "decisions": decisions,
        "confidence": decisions[0]["confidence"],
        "rerank": any(d["rerank"] for d in decisions),
        "swapped": order != ranked_ids,
    }
    return verification, order


def _base_caption(query: dict, config: PipelineConfig) -> str:
    if query["id"] in config.base_captions:
        return config.base_captions[query["id"]]
    if config.caption_provider is None:
        raise _StageFailure(
            "context",
            f"no base caption for query {query['id']!r}: not in the base-caption "
            "file and no caption provider configured",
        )
    request = BASE_CAPTION_REQUEST.format(query_id=query["id"])
    result = with_retries(
        lambda: config.caption_provider.generate_caption(request),
        config.retries,
        config.retry_base_ms,
    )
    return result.text


class _RetryingEmbedder:
    """Adapter giving build_context the pipeline's retry policy."""

    def __init__(self, provider: Provider, retries: int, base_delay_ms: float):
        self._provider = provider
        self._retries = retries
        self._base_delay_ms = base_delay_ms

    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]:
        return with_retries(
            lambda: self._provider.embed_texts(texts), self._retries, self._base_delay_ms
        )


def process_query(query: dict, config: PipelineConfig, top_k: int = DEFAULT_TOP_K) -> dict:
    """Run one query through every stage; failures produce an error record."""
    record: dict = {"id": query["id"], "error": None}
    try:
        rankings = []
        for handle in config.stores:
            try:
                vec = _query_vector(query, handle, config)
                hits = handle.store.topk(vec, top_k)
            except _StageFailure:
                raise
            except (ProviderError, ValueError) as exc:
                raise _StageFailure("retrieve", f"store {handle.model_id!r}: {exc}") from exc
            if not hits:
                raise _StageFailure("retrieve", f"store {handle.model_id!r} is empty")
            rankings.append(ModelRanking(model_id=handle.model_id, hits=tuple(hits)))
        record["rankings"] = [ranking_to_json(r) for r in rankings]

        try:
            fused = fuse(rankings, config.fusion)
        except ValueError as exc:
            raise _StageFailure("fuse", str(exc)) from exc
        record["fused"] = fused_to_json(fused)
        ranked_ids = [c.id for c in fused]

        verification, ranked_ids = _verify_candidates(query, ranked_ids, config)
        record["verification"] = verification
        record["ranked"] = ranked_ids

        chosen = ranked_ids[0]
        record["chosen_article"] = chosen
        if chosen not in config.documents:
            raise _StageFailure("context", f"no document for article {chosen!r}")
        base_caption = _base_caption(query, config)
        record["base_caption"] = base_caption
        document = make_document(chosen, config.documents[chosen])
        embedder = _RetryingEmbedder(config.text_provider, config.retries, config.retry_base_ms)
        try:
            bundle = build_context(document, base_caption, embedder)
        except (ValueError, RuntimeError) as exc:
            raise _StageFailure("context", str(exc)) from exc
        record["context"] = _bundle_to_json(bundle)
        record["prompt"] = assemble_prompt(bundle, base_caption)

        record["caption"] = None
        if config.generate_captions:
            if config.caption_provider is None:
                raise _StageFailure("caption", "generate_captions is on but no caption provider")
            result = with_retries(
                lambda: config.caption_provider.generate_caption(
                    record["prompt"], config.max_caption_words
                ),
                config.retries,
                config.retry_base_ms,
            )
            record["caption"] = _caption_to_json(result)
        return record
    except _StageFailure as exc:
        return {"id": query["id"], "error": {"stage": exc.stage, "message": str(exc)}}
    except ProviderError as exc:
        return {"id": query["id"], "error": {"stage": "provider", "message": str(exc)}}


@dataclass(frozen=True)
class PipelineResult:
    """JSON-ready full-run outcome; `metrics` only when truth was supplied."""

    seed: int
    queries: tuple[dict, ...]
    metrics: dict | None

    @property
    def failed(self) -> list[str]:
        return [q["id"] for q in self.queries if q.get("error")]

    def to_json(self) -> dict:
        out = {"seed": self.seed, "queries": list(self.queries)}
        if self.metrics is not None:
            out["metrics"] = self.metrics
        return out


def _metrics_report(records: Sequence[dict], truth: dict[str, dict]) -> dict:
    results = []
    caption_items = []
    for record in records:
        if record.get("error") or record["id"] not in truth:
            continue
        entry = truth[record["id"]]
        results.append(
            QueryResult(
                query_id=record["id"],
                ranked=tuple(record["ranked"]),
                truth=frozenset(entry["truth"]),
            )
        )
        if entry["references"] and record.get("caption"):
            caption_items.append(
                CaptionItem(
                    candidate=record["caption"]["text"],
                    references=tuple(entry["references"]),
                )
            )
    run = RetrievalRun(queries=tuple(results)) if results else None
    return report(run=run, caption_set=caption_items or None)


def run_pipeline(
    config: PipelineConfig,
    queries: Sequence[dict],
    truth: dict[str, dict] | None = None,
    top_k: int = DEFAULT_TOP_K,
    workers: int = 1,
) -> PipelineResult:
    """Process every query; failures are recorded, not raised.

    Output order always equals input order, whatever the worker count.
    """
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if top_k < 1:
        raise ConfigError("top-k must be >= 1")
    if top_k < config.fusion.pool_depth:
        raise ConfigError(
            f"top-k {top_k} is below the fusion pool depth {config.fusion.pool_depth}"
        )
    if workers == 1:
        records = [process_query(q, config, top_k) for q in queries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda q: process_query(q, config, top_k), queries))
    metrics = _metrics_report(records, truth) if truth is not None else None
    return PipelineResult(seed=config.seed, queries=tuple(records), metrics=metrics)


def dumps_result(payload: dict) -> str:
    """Canonical JSON encoding used for every CLI artifact (byte-stable)."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
