"""Interest-aware presentation ranking of matched candidates.

Combines three signals into one score:

    interest_points = 3 * [category hit] + 1 * |tag overlap with keywords|
    relevance       = match_score * (1 + points) / (1 + max points)
    freshness       = exp(-age_hours / 24)
    final           = (1 - lam) * relevance + lam * freshness

Category hits weigh 3 and keyword hits 1; lam (default 0.1) trades
relevance against recency. The 24h freshness half-life mirrors how fast
the pool itself turns over. Normalizing interest by the in-candidate-set
maximum keeps final scores in [0, 1] and makes the lam=0 ordering
scale-free in match_score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConsistencyError, InvalidInputError
from .matcher import MatchResult
from .padr import BehaviorHistory, UserProfile
from .pool import Article, NewsPool

DEFAULT_LAMBDA = 0.1
_KEYWORD_CLICK_LIMIT = 20

CATEGORY_WEIGHT = 3
KEYWORD_WEIGHT = 1


@dataclass(frozen=True)
class RankedCandidate:
    article_id: str
    match_score: float
    interest_points: int
    freshness: float
    final_score: float


def profile_keywords(
    profile: UserProfile,
    history: BehaviorHistory | None = None,
    pool: NewsPool | None = None,
) -> frozenset[str]:
    """Keyword set for tag matching: declared interests plus tags of the
    20 most recent clicks still resolvable in the pool."""
    words = set(profile.declared_interests)
    if history is not None and pool is not None:
        for click in history.clicks[-_KEYWORD_CLICK_LIMIT:]:
            art = pool.by_id.get(click.article_id)
            if art is not None:
                words.update(art.tags)
    return frozenset(words)


def interest_points(
    article: Article,
    profile: UserProfile,
    keywords: frozenset[str] | None = None,
) -> int:
    """Profile alignment points: 3 per category-level hit, 1 per keyword
    (tag) hit. keywords defaults to the declared interests alone."""
    if keywords is None:
        keywords = frozenset(profile.declared_interests)
    category_hit = article.category in set(profile.top_categories())
    tag_hits = len(set(article.tags) & keywords)
    return CATEGORY_WEIGHT * int(category_hit) + KEYWORD_WEIGHT * tag_hits


def freshness(published_at: float, now: float) -> float:
    """exp(-age_hours/24), clamped into (0, 1] for future timestamps."""
    age_hours = max(0.0, (now - published_at) / 3600.0)
    return math.exp(-age_hours / 24.0)


def rank(
    candidates: list[MatchResult],
    pool: NewsPool,
    profile: UserProfile,
    now: float,
    lam: float = DEFAULT_LAMBDA,
    history: BehaviorHistory | None = None,
) -> list[RankedCandidate]:
    """Order match candidates by the combined relevance/freshness score.

    Ties break by match_score, then published_at descending, then id, so
    the ordering is total and deterministic.
    """
    if not (0.0 <= lam <= 1.0):
        raise InvalidInputError("lambda must be in [0, 1]")
    missing = [c.article_id for c in candidates if c.article_id not in pool.by_id]
    if missing:
        raise ConsistencyError(f"candidates reference articles not in pool: {missing[:5]}")

    keywords = profile_keywords(profile, history, pool)
    points = [interest_points(pool.by_id[c.article_id], profile, keywords) for c in candidates]
    max_points = max(points, default=0)
    denom = 1 + max_points

    ranked = []
    for c, pts in zip(candidates, points):
        art = pool.by_id[c.article_id]
        relevance = c.score * (1 + pts) / denom
        fresh = freshness(art.published_at, now)
        final = (1.0 - lam) * relevance + lam * fresh
        ranked.append(
            RankedCandidate(
                article_id=c.article_id,
                match_score=c.score,
                interest_points=pts,
                freshness=fresh,
                final_score=final,
            )
        )
    by_id = pool.by_id
    ranked.sort(
        key=lambda r: (
            -r.final_score,
            -r.match_score,
            -by_id[r.article_id].published_at,
            r.article_id,
        )
    )
    return ranked
