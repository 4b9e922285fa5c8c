"""Dual-track serving: cached fast path, async enhance path, fallbacks.

The fast track never waits on a generator. It hashes the routed context,
looks up cached SID prefixes, fuzzy-matches them against the current
snapshot, and ranks; anything that goes wrong descends a four-level
cascade that terminates at platform-wide trending. The enhance track
runs generators on a bounded worker pool off the request path and
installs fresh cache entries (last writer wins per context hash).

Grounding is structural: every article id in a ServeResponse comes out
of the (pool, index) snapshot pair the request was served from, at every
cascade level, so nothing nonexistent can ever be recommended.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

from .errors import EmptyPoolError, ConsistencyError, RecordParseError
from .hashing import fnv1a_64
from .matcher import MatchResult, SIDPrefix, fuzzy_match, validate_prefix
from .padr import UserContext, UserProfile, preset_queries
from .pool import NewsPool, PrefixIndex
from .ranking import RankedCandidate, rank

logger = logging.getLogger(__name__)

DEFAULT_TTL_SECONDS = 86_400
CACHE_PREFIX_CAP = 10
MIN_LEVEL1_RESULTS = 3       # fewer level-1 matches than this triggers the cascade
LEVEL2_DELTA_BONUS = 5       # level 2 broadens matching to delta + 5

SERVED_CACHE = "cache"
SERVED_ENHANCE = "enhance"
SERVED_FALLBACK_2 = "fallback_level_2"
SERVED_FALLBACK_3 = "fallback_level_3"
SERVED_FALLBACK_4 = "fallback_level_4"


@lru_cache(maxsize=32_768)
def _hash_rendered(rendered: str) -> int:
    return fnv1a_64(rendered)


def ctx_hash(context: UserContext) -> int:
    """64-bit FNV-1a of the canonical rendered context string."""
    return _hash_rendered(context.rendered)


@dataclass(frozen=True)
class CacheEntry:
    ctx_hash: int
    prefixes: tuple[SIDPrefix, ...]
    reason: str
    ts: float
    ttl_seconds: int = DEFAULT_TTL_SECONDS

    def expired(self, now: float) -> bool:
        return (now - self.ts) > self.ttl_seconds


class SIDCache:
    """In-process concurrent cache of prefix entries keyed by ctx_hash.

    Entries are immutable and replaced whole, so readers never observe a
    torn entry; expiry is absolute (a hit does not refresh ts). An
    optional append-log persists entries across restarts.
    """

    def __init__(self, persist_path=None):
        self._entries: dict[int, CacheEntry] = {}
        self._lock = threading.Lock()
        self._persist_path = persist_path

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: int, now: float) -> Optional[CacheEntry]:
        entry = self._entries.get(key)
        if entry is None or entry.expired(now):
            return None
        return entry

    def put(self, entry: CacheEntry):
        with self._lock:
            self._entries[entry.ctx_hash] = entry
            if self._persist_path is not None:
                with open(self._persist_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(_entry_record(entry)) + "\n")

    def load(self, path):
        """Replay a persistence log; later lines win."""
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    entry = _entry_from_record(rec)
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise RecordParseError(f"bad cache entry: {e}", line=lineno) from e
                self._entries[entry.ctx_hash] = entry


def _entry_record(entry: CacheEntry) -> dict:
    return {
        "ctx_hash": entry.ctx_hash,
        "prefixes": [list(p) for p in entry.prefixes],
        "reason": entry.reason,
        "ts": entry.ts,
        "ttl_seconds": entry.ttl_seconds,
    }


def _entry_from_record(rec: dict) -> CacheEntry:
    return CacheEntry(
        ctx_hash=int(rec["ctx_hash"]),
        prefixes=tuple(validate_prefix(p, what="cache prefix") for p in rec["prefixes"]),
        reason=str(rec.get("reason", "")),
        ts=float(rec["ts"]),
        ttl_seconds=int(rec.get("ttl_seconds", DEFAULT_TTL_SECONDS)),
    )


@dataclass(frozen=True)
class LatencyBreakdown:
    lookup_ms: float = 0.0
    match_ms: float = 0.0
    rank_ms: float = 0.0
    total_ms: float = 0.0


@dataclass(frozen=True)
class ServeResponse:
    articles: tuple[RankedCandidate, ...]
    served_from: str
    latency: LatencyBreakdown
    pool_version: int

    def to_record(self) -> dict:
        return {
            "articles": [
                {
                    "article_id": a.article_id,
                    "match_score": a.match_score,
                    "interest_points": a.interest_points,
                    "freshness": a.freshness,
                    "final_score": a.final_score,
                }
                for a in self.articles
            ],
            "served_from": self.served_from,
            "latency_breakdown": {
                "lookup_ms": self.latency.lookup_ms,
                "match_ms": self.latency.match_ms,
                "rank_ms": self.latency.rank_ms,
                "total_ms": self.latency.total_ms,
            },
            "pool_version": self.pool_version,
        }


def merge_matches(per_prefix: Iterable[list[MatchResult]]) -> list[MatchResult]:
    """Union match lists from several prefixes, keeping each article once
    at its best score."""
    best: dict[str, MatchResult] = {}
    for results in per_prefix:
        for r in results:
            cur = best.get(r.article_id)
            if cur is None or r.score > cur.score:
                best[r.article_id] = r
    return list(best.values())


def _match_prefixes(
    prefixes: Iterable[SIDPrefix], index: PrefixIndex, delta: int, k: int
) -> list[MatchResult]:
    return merge_matches(fuzzy_match(p, index, delta=delta, k=k) for p in prefixes)


def _top_by_popularity(pool: NewsPool, k: int, click_counts, categories=None):
    """Top-k articles by click count (recency tiebreak) or recency alone.

    Without a click log this rides the pool's cached recency orderings,
    so a fallback serve costs O(k), not a pool-wide sort per request.
    """
    if categories is not None:
        groups = pool.category_recency()
        lists = [groups.get(cat, []) for cat in categories]
        if click_counts:
            merged = [a for lst in lists for a in lst]
            merged.sort(key=lambda a: (-click_counts.get(a.id, 0), -a.published_at, a.id))
            return merged[:k]
        merged = heapq.merge(*lists, key=lambda a: (-a.published_at, a.id))
        return list(itertools.islice(merged, k))
    if click_counts:
        return sorted(pool.articles,
                      key=lambda a: (-click_counts.get(a.id, 0), -a.published_at, a.id))[:k]
    return list(pool.recency_order()[:k])


def _as_matches(articles) -> list[MatchResult]:
    # Fallback-selected articles carry no matcher signal; score 1.0 is
    # neutral under the rank() normalization.
    return [MatchResult(article_id=a.id, score=1.0, s3_distance=0) for a in articles]


def fallback_cascade(
    context: UserContext,
    index: PrefixIndex,
    pool: NewsPool,
    profile: UserProfile,
    start_level: int,
    prefixes: tuple[SIDPrefix, ...] = (),
    origin: str = SERVED_CACHE,
    delta: int = 5,
    k: int = 10,
    lam: float = 0.1,
    now: float | None = None,
    click_counts: dict[str, int] | None = None,
) -> ServeResponse:
    """Walk levels start_level..4 until one yields at least one article.

    Level 1: standard matching (delta) on the given prefixes; a success
    reports served_from as the prefix origin (cache or enhance).
    Level 2: broadened matching (delta + 5) on the same prefixes.
    Level 3: most-clicked (or most recent, absent a click log) articles
    in the profile's top categories.
    Level 4: pool-wide top articles. Only an empty pool can fail here.
    """
    if start_level not in (1, 2, 3, 4):
        raise ConsistencyError(f"start_level must be 1..4, got {start_level}")
    if len(pool) == 0:
        raise EmptyPoolError("cannot serve from an empty pool")
    now = time.time() if now is None else now
    t0 = time.perf_counter()
    match_ms = 0.0

    def _respond(candidates: list[MatchResult], served_from: str) -> ServeResponse:
        t_rank = time.perf_counter()
        ranked = rank(candidates, pool, profile, now=now, lam=lam, history=context.history)[:k]
        t_end = time.perf_counter()
        return ServeResponse(
            articles=tuple(ranked),
            served_from=served_from,
            latency=LatencyBreakdown(
                lookup_ms=0.0,
                match_ms=match_ms,
                rank_ms=(t_end - t_rank) * 1000.0,
                total_ms=(t_end - t0) * 1000.0,
            ),
            pool_version=pool.version,
        )

    if start_level <= 1 and prefixes:
        t = time.perf_counter()
        merged = _match_prefixes(prefixes, index, delta=delta, k=k)
        match_ms += (time.perf_counter() - t) * 1000.0
        if merged:
            return _respond(merged, origin)

    if start_level <= 2 and prefixes:
        t = time.perf_counter()
        merged = _match_prefixes(prefixes, index, delta=delta + LEVEL2_DELTA_BONUS, k=k)
        match_ms += (time.perf_counter() - t) * 1000.0
        if merged:
            return _respond(merged, SERVED_FALLBACK_2)

    # Levels 3 and 4 pick exactly the top-k by the level's signal; rank()
    # then only orders the picked set for presentation.
    if start_level <= 3:
        cats = profile.top_categories()
        if cats:
            chosen = _top_by_popularity(pool, k, click_counts, categories=cats)
            if chosen:
                return _respond(_as_matches(chosen), SERVED_FALLBACK_3)

    chosen = _top_by_popularity(pool, k, click_counts)
    return _respond(_as_matches(chosen), SERVED_FALLBACK_4)


def fast_track(
    context: UserContext,
    cache: SIDCache,
    index: PrefixIndex,
    pool: NewsPool,
    profile: UserProfile,
    delta: int = 5,
    k: int = 10,
    lam: float = 0.1,
    now: float | None = None,
    schedule_enhance: Callable[[UserContext], None] | None = None,
    click_counts: dict[str, int] | None = None,
) -> ServeResponse:
    """Serve one request from the cache-and-match path.

    Cache hit: fuzzy-match the cached prefixes and rank; fewer than
    MIN_LEVEL1_RESULTS matches descends the cascade from level 2. Cache
    miss: schedule the enhance track (if a scheduler is wired) and serve
    the profile fallback (level 3) immediately. The whole request reads
    one (pool, index) snapshot pair.
    """
    if index.built_from != pool.version:
        raise ConsistencyError(
            f"index built from pool version {index.built_from}, serving pool is {pool.version}"
        )
    if len(pool) == 0:
        raise EmptyPoolError("cannot serve from an empty pool")
    now = time.time() if now is None else now

    t0 = time.perf_counter()
    entry = cache.get(ctx_hash(context), now)
    t_lookup = time.perf_counter()
    lookup_ms = (t_lookup - t0) * 1000.0

    if entry is None:
        if schedule_enhance is not None:
            schedule_enhance(context)
        resp = fallback_cascade(
            context, index, pool, profile,
            start_level=3, delta=delta, k=k, lam=lam, now=now, click_counts=click_counts,
        )
        total = (time.perf_counter() - t0) * 1000.0
        return ServeResponse(
            articles=resp.articles,
            served_from=resp.served_from,
            latency=LatencyBreakdown(lookup_ms, resp.latency.match_ms, resp.latency.rank_ms, total),
            pool_version=resp.pool_version,
        )

    merged = _match_prefixes(entry.prefixes, index, delta=delta, k=k)
    t_match = time.perf_counter()
    match_ms = (t_match - t_lookup) * 1000.0

    if len(merged) >= MIN_LEVEL1_RESULTS:
        ranked = rank(merged, pool, profile, now=now, lam=lam, history=context.history)[:k]
        t_end = time.perf_counter()
        return ServeResponse(
            articles=tuple(ranked),
            served_from=SERVED_CACHE,
            latency=LatencyBreakdown(
                lookup_ms, match_ms, (t_end - t_match) * 1000.0, (t_end - t0) * 1000.0
            ),
            pool_version=pool.version,
        )

    resp = fallback_cascade(
        context, index, pool, profile,
        start_level=2, prefixes=entry.prefixes,
        delta=delta, k=k, lam=lam, now=now, click_counts=click_counts,
    )
    total = (time.perf_counter() - t0) * 1000.0
    return ServeResponse(
        articles=resp.articles,
        served_from=resp.served_from,
        latency=LatencyBreakdown(lookup_ms, match_ms + resp.latency.match_ms,
                                 resp.latency.rank_ms, total),
        pool_version=resp.pool_version,
    )


def enhance_track(
    context: UserContext,
    generator,
    cache: SIDCache,
    now: float | None = None,
    ttl_seconds: int = DEFAULT_TTL_SECONDS,
) -> Optional[CacheEntry]:
    """Run the generator and install a fresh cache entry.

    Runs off the request path (callers submit it to a worker pool). A
    failing generator or an empty output leaves the cache untouched and
    the fallback keeps serving.
    """
    now = time.time() if now is None else now
    try:
        output = generator.generate(context)
    except Exception:
        logger.exception("enhance track: generator failed for user %r", context.user_id)
        return None
    prefixes = tuple(
        validate_prefix(tuple(p), what="generated prefix") for p in output.prefixes
    )[:CACHE_PREFIX_CAP]
    if not prefixes:
        return None
    entry = CacheEntry(
        ctx_hash=ctx_hash(context),
        prefixes=prefixes,
        reason=output.reason,
        ts=now,
        ttl_seconds=ttl_seconds,
    )
    cache.put(entry)
    return entry


class EnhanceWorkers:
    """Bounded worker pool for enhance-track tasks.

    Per-key ordering is last-writer-wins at the cache, so concurrent
    tasks for one ctx_hash are safe; they just race to be the final entry.
    """

    def __init__(self, cache: SIDCache, generator, workers: int = 2,
                 ttl_seconds: int = DEFAULT_TTL_SECONDS):
        self._cache = cache
        self._generator = generator
        self._ttl = ttl_seconds
        self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="enhance")
        self._pending: set = set()
        self.scheduled = 0
        self._lock = threading.Lock()

    def schedule(self, context: UserContext):
        future = self._executor.submit(enhance_track, context, self._generator,
                                       self._cache, None, self._ttl)
        with self._lock:
            self.scheduled += 1
            self._pending.add(future)
        future.add_done_callback(self._discard)

    def _discard(self, future):
        with self._lock:
            self._pending.discard(future)

    def drain(self, timeout: float | None = None):
        """Wait for currently scheduled tasks; the pool stays usable."""
        with self._lock:
            pending = list(self._pending)
        for future in pending:
            future.result(timeout=timeout)

    def close(self, cancel_pending: bool = False):
        self._executor.shutdown(wait=True, cancel_futures=cancel_pending)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.drain()
        self.close()


def warm_cache(
    profiles: Iterable[UserProfile],
    generator,
    cache: SIDCache,
    tau: int = 10,
    ttl_seconds: int = DEFAULT_TTL_SECONDS,
    now: float | None = None,
) -> int:
    """Proactively install entries for every profile's preset queries.

    Returns the number of entries written (empty generator outputs write
    nothing).
    """
    installed = 0
    for profile in profiles:
        for preset in preset_queries(profile, tau=tau):
            if enhance_track(preset, generator, cache, now=now, ttl_seconds=ttl_seconds):
                installed += 1
    return installed


# -- Metrics -------------------------------------------------------------


@dataclass
class TrackMetrics:
    requests: int = 0
    cache_hit_rate: float = 0.0
    fallback_level_rates: dict = field(default_factory=dict)
    latency_p50_ms: float = 0.0
    latency_p95_ms: float = 0.0

    def to_record(self) -> dict:
        return {
            "requests": self.requests,
            "cache_hit_rate": self.cache_hit_rate,
            "fallback_level_rates": dict(self.fallback_level_rates),
            "latency_p50_ms": self.latency_p50_ms,
            "latency_p95_ms": self.latency_p95_ms,
        }


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile; 0.0 for an empty list."""
    if not values:
        return 0.0
    ordered = sorted(values)
    idx = max(0, min(len(ordered) - 1, int(round(q * (len(ordered) - 1)))))
    return ordered[idx]


class MetricsCollector:
    """Thread-safe counters for serve outcomes and latencies."""

    _MAX_SAMPLES = 200_000

    def __init__(self):
        self._lock = threading.Lock()
        self._by_source: dict[str, int] = {}
        self._latencies: list[float] = []
        self._requests = 0

    def record(self, response: ServeResponse):
        with self._lock:
            self._requests += 1
            self._by_source[response.served_from] = self._by_source.get(response.served_from, 0) + 1
            if len(self._latencies) < self._MAX_SAMPLES:
                self._latencies.append(response.latency.total_ms)

    def snapshot(self) -> TrackMetrics:
        with self._lock:
            total = self._requests
            hits = self._by_source.get(SERVED_CACHE, 0) + self._by_source.get(SERVED_ENHANCE, 0)
            rates = {src: n / total for src, n in sorted(self._by_source.items())} if total else {}
            return TrackMetrics(
                requests=total,
                cache_hit_rate=hits / total if total else 0.0,
                fallback_level_rates=rates,
                latency_p50_ms=percentile(self._latencies, 0.50),
                latency_p95_ms=percentile(self._latencies, 0.95),
            )


# -- In-process benchmark -------------------------------------------------


def run_benchmark(
    contexts: list[tuple[UserContext, UserProfile]],
    cache: SIDCache,
    index: PrefixIndex,
    pool: NewsPool,
    requests: int,
    concurrency: int,
    delta: int = 5,
    k: int = 10,
    lam: float = 0.1,
    schedule_enhance=None,
    now: float | None = None,
) -> dict:
    """Drive fast_track from `concurrency` threads and report percentiles.

    Requests cycle over the provided contexts. Latency is wall time per
    fast_track call measured inside the worker. A fixed `now` makes the
    run independent of the wall clock (cache entries judged against it).
    """
    latencies = [0.0] * requests
    sources: dict[str, int] = {}
    lock = threading.Lock()

    def worker(idx: int):
        ctx, prof = contexts[idx % len(contexts)]
        t0 = time.perf_counter()
        resp = fast_track(
            ctx, cache, index, pool, prof,
            delta=delta, k=k, lam=lam, schedule_enhance=schedule_enhance, now=now,
        )
        latencies[idx] = (time.perf_counter() - t0) * 1000.0
        with lock:
            sources[resp.served_from] = sources.get(resp.served_from, 0) + 1

    with ThreadPoolExecutor(max_workers=concurrency) as ex:
        list(ex.map(worker, range(requests)))

    return {
        "requests": requests,
        "concurrency": concurrency,
        "p50_ms": percentile(latencies, 0.50),
        "p95_ms": percentile(latencies, 0.95),
        "max_ms": max(latencies) if latencies else 0.0,
        "served_from": dict(sorted(sources.items())),
    }
