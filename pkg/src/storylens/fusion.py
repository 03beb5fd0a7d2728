"""Consensus fusion of per-model retrieval rankings.

Each model contributes its top ``pool_depth`` hits (default 2). A pooled
candidate's weighted score per appearance is

    s_weighted = s_original * (1 / n_models) * position_weights[position]

and its final score is the mean of those contributions plus a consensus bonus
of ``consensus_bonus`` per extra contributing model:

    s_final = mean(s_weighted) + consensus_bonus * (m - 1)

where m counts distinct models that retrieved the candidate within the pool
depth. Output is sorted by s_final descending with id-ascending tie-break.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from .embed_store import ScoredHit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelRanking:
    model_id: str
    hits: tuple[ScoredHit, ...]

    def __post_init__(self):
        if not self.hits:
            raise ValueError(f"ranking for {self.model_id!r} has no hits")
        scores = [h.score for h in self.hits]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(
                f"ranking for {self.model_id!r} is not sorted by descending score")


@dataclass(frozen=True)
class FusionConfig:
    position_weights: tuple[float, ...] = (1.0, 0.8)
    consensus_bonus: float = 0.03
    pool_depth: int = 2
    # optional per-model min-max rescaling over the pooled hits, for encoders
    # with incompatible score ranges; off by default (raw scores used as-is)
    minmax_normalize: bool = False

    def __post_init__(self):
        if self.pool_depth < 1 or self.pool_depth > len(self.position_weights):
            raise ValueError("pool_depth must be in 1..len(position_weights)")
        if any(not (0.0 < w <= 1.0) for w in self.position_weights):
            raise ValueError("position weights must lie in (0, 1]")


@dataclass(frozen=True)
class Contribution:
    model_id: str
    position: int
    s_weighted: float


@dataclass(frozen=True)
class FusedCandidate:
    id: str
    s_final: float
    contributions: tuple[Contribution, ...] = field(default_factory=tuple)


def weighted_score(s_original: float, n_models: int, position: int,
                   config: FusionConfig = FusionConfig()) -> float:
    """Position- and model-weighted score of one appearance."""
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    if not 0 <= position < config.pool_depth:
        raise ValueError(
            f"position {position} outside pool depth {config.pool_depth}")
    return s_original * (1.0 / n_models) * config.position_weights[position]


def fuse(rankings: Sequence[ModelRanking],
         config: FusionConfig = FusionConfig()) -> list[FusedCandidate]:
    """Fuse per-model rankings into one consensus ranking.

    The candidate pool is the union of every model's top pool_depth hits, so
    the output never exceeds n_models * pool_depth candidates. A model listing
    the same id twice inside the pool keeps only the higher position (and
    logs a warning): m counts distinct models.
    """
    if not rankings:
        raise ValueError("at least one model ranking is required")
    n_models = len(rankings)
    pooled: dict[str, list[Contribution]] = {}
    for ranking in rankings:
        pool = ranking.hits[:config.pool_depth]
        scores = [h.score for h in pool]
        if config.minmax_normalize and len(pool) > 1:
            lo, hi = min(scores), max(scores)
            if hi > lo:
                scores = [(s - lo) / (hi - lo) for s in scores]
            else:
                scores = [1.0] * len(pool)
        seen: set[str] = set()
        for position, (hit, score) in enumerate(zip(pool, scores)):
            if hit.id in seen:
                logger.warning("model %s ranks id %r twice within pool depth %d; "
                               "keeping the higher position",
                               ranking.model_id, hit.id, config.pool_depth)
                continue
            seen.add(hit.id)
            contribution = Contribution(
                model_id=ranking.model_id, position=position,
                s_weighted=weighted_score(score, n_models, position, config))
            pooled.setdefault(hit.id, []).append(contribution)
    fused = []
    for cand_id, contribs in pooled.items():
        m = len(contribs)
        # fsum: correctly rounded, so s_final is identical no matter how the
        # input rankings were ordered (plain sum is not associative)
        s_final = (math.fsum(c.s_weighted for c in contribs) / m
                   + config.consensus_bonus * (m - 1))
        fused.append(FusedCandidate(id=cand_id, s_final=s_final,
                                    contributions=tuple(contribs)))
    fused.sort(key=lambda c: (-c.s_final, c.id))
    return fused


# --- JSON adapters ---------------------------------------------------------

def ranking_from_json(obj: dict) -> ModelRanking:
    hits = tuple(ScoredHit(id=h["id"], score=float(h["score"]))
                 for h in obj["hits"])
    return ModelRanking(model_id=obj["model_id"], hits=hits)


def ranking_to_json(ranking: ModelRanking) -> dict:
    return {"model_id": ranking.model_id,
            "hits": [{"id": h.id, "score": h.score} for h in ranking.hits]}


def fused_to_json(fused: Sequence[FusedCandidate]) -> list[dict]:
    return [{"id": c.id, "s_final": c.s_final,
             "contributions": [
                 {"model_id": k.model_id, "position": k.position,
                  "s_weighted": k.s_weighted} for k in c.contributions]}
            for c in fused]
