"""Retrieval and caption quality metrics.

average_precision and recall_at_k score ranked retrieval runs. cider_d scores
candidate captions against reference sets with TF-IDF weighted n-gram cosine
similarity (n = 1..4), count clipping, and a Gaussian length penalty
(sigma = 6), scaled by 10.

Conventions, frozen here and asserted by tests:
- tokenize: lowercase, split on non-alphanumeric runs, no stemming;
- document frequency counts distinct items whose reference set contains the
  n-gram, so duplicating the whole corpus leaves every idf unchanged;
- idf = log(n_items / df); an n-gram absent from every reference gets weight
  0 rather than a clamped df of 1 (a clamp would make scores depend on corpus
  size through n-grams that can never match a reference);
- length penalty uses token counts: exp(-(len_c - len_r)^2 / (2 * 6^2)).
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

CIDER_MAX_N = 4
CIDER_SIGMA = 6.0

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class QueryResult:
    query_id: str
    ranked: tuple[str, ...]
    truth: frozenset[str]

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError(f"query {self.query_id!r}: ranked ids not unique")
        if not self.truth:
            raise ValueError(f"query {self.query_id!r}: empty ground truth")


@dataclass(frozen=True)
class RetrievalRun:
    queries: tuple[QueryResult, ...]


@dataclass(frozen=True)
class CaptionItem:
    candidate: str
    references: tuple[str, ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError("caption item needs at least one reference")


def average_precision(run: RetrievalRun) -> float:
    """Mean over queries of sum(precision@rank of each relevant hit) / |truth|.

    Relevant items never retrieved contribute zero. With singleton truth this
    reduces to reciprocal rank.
    """
    if not run.queries:
        raise ValueError("empty run")
    per_query = []
    for q in run.queries:
        hits = 0
        acc = 0.0
        for rank, rec_id in enumerate(q.ranked, start=1):
            if rec_id in q.truth:
                hits += 1
                acc += hits / rank
        per_query.append(acc / len(q.truth))
    return sum(per_query) / len(per_query)


def recall_at_k(run: RetrievalRun, k: int) -> float:
    """Fraction of queries whose top-k intersects the ground truth."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not run.queries:
        raise ValueError("empty run")
    hit = sum(1 for q in run.queries if any(r in q.truth for r in q.ranked[:k]))
    return hit / len(run.queries)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def cider_d(items: Sequence[CaptionItem]) -> tuple[float, list[float]]:
    """CIDEr-D over a caption set.

    Returns (mean score, per-item scores). Per item and reference, each n in
    1..4 contributes

        penalty * sum_g min(hc_g, hr_g) * hr_g * idf_g^2
                / (|hc . idf| * |hr . idf|)

    with hc/hr raw n-gram counts (candidate counts clipped at the reference's),
    averaged over references, then over n, times 10. An empty candidate scores
    0 for its item. Corpora of at least 2 items are recommended so idf
    separates content; a single-item corpus makes every idf log(1) = 0 and all
    scores 0.
    """
    if not items:
        raise ValueError("empty caption set")
    n_items = len(items)
    df: list[Counter] = [Counter() for _ in range(CIDER_MAX_N)]
    ref_counts: list[list[list[Counter]]] = []
    ref_lens: list[list[int]] = []
    for item in items:
        per_ref_counts = []
        per_ref_lens = []
        seen: list[set] = [set() for _ in range(CIDER_MAX_N)]
        for ref in item.references:
            toks = tokenize(ref)
            per_ref_lens.append(len(toks))
            counts = [_ngrams(toks, n) for n in range(1, CIDER_MAX_N + 1)]
            per_ref_counts.append(counts)
            for n in range(CIDER_MAX_N):
                seen[n].update(counts[n].keys())
        for n in range(CIDER_MAX_N):
            for gram in seen[n]:
                df[n][gram] += 1
        ref_counts.append(per_ref_counts)
        ref_lens.append(per_ref_lens)

    log_n_items = math.log(n_items)

    def idf(n_index: int, gram) -> float:
        d = df[n_index].get(gram, 0)
        if d == 0:
            return 0.0
        return log_n_items - math.log(d)

    per_item_scores = []
    for item_index, item in enumerate(items):
        cand_toks = tokenize(item.candidate)
        cand_counts = [_ngrams(cand_toks, n) for n in range(1, CIDER_MAX_N + 1)]
        sims = [0.0] * CIDER_MAX_N
        for ref_index in range(len(item.references)):
            delta = len(cand_toks) - ref_lens[item_index][ref_index]
            penalty = math.exp(-(delta * delta) / (2.0 * CIDER_SIGMA ** 2))
            for n in range(CIDER_MAX_N):
                hc = cand_counts[n]
                hr = ref_counts[item_index][ref_index][n]
                norm_c = math.sqrt(sum((c * idf(n, g)) ** 2
                                       for g, c in hc.items()))
                norm_r = math.sqrt(sum((c * idf(n, g)) ** 2
                                       for g, c in hr.items()))
                if norm_c == 0.0 or norm_r == 0.0:
                    continue
                num = sum(min(hc[g], hr[g]) * hr[g] * idf(n, g) ** 2
                          for g in hc if g in hr)
                sims[n] += penalty * num / (norm_c * norm_r)
        n_refs = len(item.references)
        per_item_scores.append(
            10.0 * sum(s / n_refs for s in sims) / CIDER_MAX_N)
    return sum(per_item_scores) / n_items, per_item_scores


def report(run: RetrievalRun | None = None,
           caption_set: Sequence[CaptionItem] | None = None) -> dict:
    """Metric report as a JSON-ready dict.

    `overall` (the unweighted mean of ap, recall_at_1, recall_at_10 and
    cider_d / 10) is emitted only when all four components are present; it
    stands in for the challenge's combined score, whose exact formula is not
    public.
    """
    out: dict = {}
    if run is not None:
        out["ap"] = average_precision(run)
        out["recall_at_1"] = recall_at_k(run, 1)
        out["recall_at_10"] = recall_at_k(run, 10)
    if caption_set is not None:
        out["cider_d"] = cider_d(caption_set)[0]
    if {"ap", "recall_at_1", "recall_at_10", "cider_d"} <= out.keys():
        out["overall"] = (out["ap"] + out["recall_at_1"] + out["recall_at_10"]
                          + out["cider_d"] / 10.0) / 4.0
    return out
