"""Article context extraction: sentences, chunks, entities, prompt assembly.

The sentence splitter is rule-based with a frozen abbreviation list (no
learned model): it splits after a maximal run of ``.!?`` that is followed by
whitespace and then an uppercase letter, an opening quote, or a digit. Spans
are half-open byte offsets into the UTF-8 encoding of the text.

Chunks slide a 3-sentence window with 1-sentence stride over the document;
the top 5 by cosine similarity to the base caption (embedded by a provider)
join the first 3 and last 2 sentences and regex-extracted entities in the
final captioning prompt.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

# split suppression applies to periods only; matching is case-sensitive
ABBREVIATIONS = frozenset(
    {"Mr.", "Mrs.", "Dr.", "St.", "U.S.", "U.K.", "etc.", "vs.", "No.", "Fig."})
OPENING_QUOTES = frozenset({'"', "'", "“", "‘"})
TERMINATORS = frozenset(".!?")

# single-token matches that are just a capitalized sentence opener
ENTITY_STOPWORDS = frozenset(
    {"The", "A", "In", "On", "He", "She", "It", "They", "We", "But", "And"})

_CAP_TOKEN = r"(?:[A-Z][a-z]+|[A-Z]{2,})"
_CAP_RUN = rf"{_CAP_TOKEN}(?:\s+{_CAP_TOKEN})*"
_ENTITY_RE = re.compile(
    rf"{_CAP_RUN}(?:\s+(?:of(?:\s+the)?|the|&)\s+{_CAP_RUN})*")

DEFAULT_WINDOW = 3
DEFAULT_STRIDE = 1
DEFAULT_TOP_K = 5
LEAD_SENTENCES = 3
TAIL_SENTENCES = 2


class TextEmbedder(Protocol):
    def embed_texts(self, texts: Sequence[str]) -> list[list[float]]: ...


class ChunkSelectionError(RuntimeError):
    """Embedding failure during chunk selection, with batch context."""


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    sentences: tuple[tuple[int, int], ...]

    def sentence_texts(self) -> list[str]:
        raw = self.text.encode("utf-8")
        return [raw[a:b].decode("utf-8") for a, b in self.sentences]


@dataclass(frozen=True)
class Chunk:
    start_sentence: int
    end_sentence: int
    text: str
    similarity: float | None = None


@dataclass(frozen=True)
class EntitySet:
    entities: tuple[str, ...]


@dataclass(frozen=True)
class ContextBundle:
    lead: tuple[str, ...]
    tail: tuple[str, ...]
    top_chunks: tuple[Chunk, ...]
    entities: EntitySet
    n_sentences: int


def split_sentences(text: str) -> tuple[tuple[int, int], ...]:
    """Sentence spans as half-open byte offsets into the UTF-8 encoding.

    A trailing fragment without a terminator is kept as a final sentence,
    trimmed of trailing whitespace, so spans cover all non-whitespace text.
    """
    spans_chars: list[tuple[int, int]] = []
    n = len(text)
    start: int | None = None
    i = 0
    while i < n:
        ch = text[i]
        if start is None:
            if not ch.isspace():
                start = i
            i += 1
            continue
        if ch not in TERMINATORS:
            i += 1
            continue
        j = i
        while j < n and text[j] in TERMINATORS:
            j += 1
        if j >= n:
            spans_chars.append((start, j))
            start = None
            i = j
            continue
        split_here = False
        if text[j].isspace():
            k = j
            while k < n and text[k].isspace():
                k += 1
            if k < n:
                nxt = text[k]
                split_here = (nxt.isupper() or nxt.isdigit()
                              or nxt in OPENING_QUOTES)
        if split_here and text[j - 1] == ".":
            word_start = i
            while word_start > start and not text[word_start - 1].isspace():
                word_start -= 1
            if text[word_start:j] in ABBREVIATIONS:
                split_here = False
        if split_here:
            spans_chars.append((start, j))
            start = None
        i = j
    if start is not None:
        end = n
        while end > start and text[end - 1].isspace():
            end -= 1
        if end > start:
            spans_chars.append((start, end))
    # char offsets -> byte offsets
    byte_at = [0] * (n + 1)
    acc = 0
    for idx, ch in enumerate(text):
        byte_at[idx] = acc
        acc += len(ch.encode("utf-8"))
    byte_at[n] = acc
    return tuple((byte_at[a], byte_at[b]) for a, b in spans_chars)


def make_document(doc_id: str, text: str) -> Document:
    return Document(id=doc_id, text=text, sentences=split_sentences(text))


def chunk_sliding(document: Document, window: int = DEFAULT_WINDOW,
                  stride: int = DEFAULT_STRIDE) -> list[Chunk]:
    """Sliding-window chunks over sentences.

    Chunks start at 0, stride, 2*stride, ... while a full window fits; a
    document shorter than the window yields one chunk spanning everything.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    texts = document.sentence_texts()
    n = len(texts)
    if n == 0:
        return []
    if n < window:
        return [Chunk(start_sentence=0, end_sentence=n - 1,
                      text=" ".join(texts))]
    return [Chunk(start_sentence=s, end_sentence=s + window - 1,
                  text=" ".join(texts[s:s + window]))
            for s in range(0, n - window + 1, stride)]


def extract_entities(text: str) -> EntitySet:
    """Capitalized-token sequences, optionally joined by of/the/&.

    Tokens are [A-Z][a-z]+ words or all-caps acronyms of 2+ letters. A match
    consisting of a single sentence-opener stopword is dropped. Duplicates
    are removed keeping first-occurrence order.
    """
    seen: set[str] = set()
    ordered: list[str] = []
    for match in _ENTITY_RE.finditer(text):
        entity = " ".join(match.group().split())
        if entity in ENTITY_STOPWORDS:
            continue
        if entity not in seen:
            seen.add(entity)
            ordered.append(entity)
    return EntitySet(entities=tuple(ordered))


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def select_chunks(chunks: Sequence[Chunk], query_text: str,
                  embedder: TextEmbedder, k: int = DEFAULT_TOP_K) -> list[Chunk]:
    """Top-k chunks by cosine similarity to the query text.

    The query and every chunk are embedded in one batch call. Ties break
    toward the earlier chunk; k is capped at the chunk count.
    """
    if not chunks:
        raise ValueError("select_chunks requires at least one chunk")
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = [query_text] + [c.text for c in chunks]
    try:
        vectors = embedder.embed_texts(batch)
    except Exception as exc:
        raise ChunkSelectionError(
            f"embedding failed for query + chunks 0..{len(chunks) - 1}: "
            f"{exc}") from exc
    if len(vectors) != len(batch):
        raise ChunkSelectionError(
            f"embedder returned {len(vectors)} vectors for a batch of "
            f"{len(batch)} (query + chunks 0..{len(chunks) - 1})")
    query_vec = vectors[0]
    scored = [replace(chunk, similarity=_cosine(query_vec, vec))
              for chunk, vec in zip(chunks, vectors[1:])]
    scored.sort(key=lambda c: (-c.similarity, c.start_sentence))
    return scored[:min(k, len(scored))]


def build_context(document: Document, base_caption: str,
                  embedder: TextEmbedder) -> ContextBundle:
    """Lead/tail sentences, top-5 chunks, and entities for one document.

    Lead and tail sentences stay eligible as chunk material; overlap is
    resolved at prompt render time, not here.
    """
    texts = document.sentence_texts()
    n = len(texts)
    if n == 0:
        raise ValueError(f"document {document.id!r} has no sentences")
    lead_count = min(LEAD_SENTENCES, n)
    tail_count = min(TAIL_SENTENCES, n - lead_count)
    lead = tuple(texts[:lead_count])
    tail = tuple(texts[n - tail_count:]) if tail_count else ()
    chunks = chunk_sliding(document)
    top_chunks = tuple(select_chunks(chunks, base_caption, embedder,
                                     k=DEFAULT_TOP_K))
    return ContextBundle(lead=lead, tail=tail, top_chunks=top_chunks,
                         entities=extract_entities(document.text),
                         n_sentences=n)


_PROMPT_HEADER = """\
You are an experienced news caption writer. Rewrite the base caption into an
event-enriched caption grounded in the news context below.

Instructions:
1. The NEWS CONTEXT is MORE IMPORTANT than the visual details.
2. Start with "The image shows" but immediately connect to the news story.
3. Use 70% article information and 30% visual description, keeping visual
   elements coherent with the article content.
4. Emphasize WHO, WHAT, WHY, WHEN, and WHERE from the article.
5. Mention the specific names, organizations, and events referenced in the
   article.
6. Explain the significance and broader implications of the news.
7. Describe only visual elements that are relevant to the news story.
8. Produce a 300-350 word caption prioritizing factual and newsworthy
   content."""

TEMPLATE_IDS = ("default",)


def assemble_prompt(bundle: ContextBundle, base_caption: str,
                    template_id: str = "default") -> str:
    """Render the captioning prompt.

    NEWS CONTEXT lists lead, selected chunks, and tail in document order; a
    chunk whose sentence span falls entirely inside the lead/tail material is
    rendered once (skipped as a duplicate). Deterministic for fixed inputs.
    """
    if template_id not in TEMPLATE_IDS:
        raise ValueError(f"unknown template id {template_id!r}; "
                         f"known: {', '.join(TEMPLATE_IDS)}")
    n = bundle.n_sentences
    lead_indices = set(range(len(bundle.lead)))
    tail_start = n - len(bundle.tail)
    tail_indices = set(range(tail_start, n))
    covered = lead_indices | tail_indices
    # (document position, tie rank, text); lead first, tail last on ties
    blocks: list[tuple[int, int, str]] = []
    if bundle.lead:
        blocks.append((0, 0, " ".join(bundle.lead)))
    for chunk in bundle.top_chunks:
        span = set(range(chunk.start_sentence, chunk.end_sentence + 1))
        if span <= covered:
            continue
        blocks.append((chunk.start_sentence, 1, chunk.text))
    if bundle.tail:
        blocks.append((tail_start, 2, " ".join(bundle.tail)))
    blocks.sort(key=lambda b: (b[0], b[1]))
    context_text = "\n".join(text for _, _, text in blocks)
    entities_text = (", ".join(bundle.entities.entities)
                     if bundle.entities.entities else "(none)")
    return (f"{_PROMPT_HEADER}\n\n"
            f"NEWS CONTEXT:\n{context_text}\n\n"
            f"NAMED ENTITIES:\n{entities_text}\n\n"
            f"BASE CAPTION:\n{base_caption}\n")
