import threading

import pytest

from sidground.codebook import SID
from sidground.dualtrack import (
    CacheEntry,
    EnhanceWorkers,
    MetricsCollector,
    SIDCache,
    ctx_hash,
    enhance_track,
    fallback_cascade,
    fast_track,
    merge_matches,
    percentile,
    warm_cache,
)
from sidground.errors import EmptyPoolError, ConsistencyError
from sidground.generator import GeneratorOutput, PoolSampledGenerator
from sidground.hashing import fnv1a_64
from sidground.matcher import MatchResult, SIDPrefix
from sidground.padr import EMPTY_HISTORY, UserProfile, route
from sidground.pool import Article, NewsPool, build_index, refresh

NOW = 1_700_000_000.0


def art(i, s1=1, s2=1, s3=10, category="technology", age_hours=1.0):
    return Article(id=f"d{i:03d}", title=f"t{i}", category=category, tags=(),
                   published_at=NOW - age_hours * 3600.0, sid=SID(s1, s2, s3, 0))


def ctx(query="q", profile=None):
    profile = profile or UserProfile(user_id="u1", declared_interests=("technology",))
    return route(profile, EMPTY_HISTORY, query, tau=10)


def entry_for(context, prefixes, ts=NOW, ttl=86_400):
    return CacheEntry(ctx_hash=ctx_hash(context), prefixes=tuple(prefixes),
                      reason="", ts=ts, ttl_seconds=ttl)


class StaticGenerator:
    def __init__(self, prefixes, reason="static"):
        self._out = GeneratorOutput(prefixes=tuple(prefixes), reason=reason)

    def generate(self, context):
        return self._out


class FailingGenerator:
    def generate(self, context):
        raise RuntimeError("model down")


class TestCtxHash:
    def test_identical_contexts_same_hash(self):
        assert ctx_hash(ctx()) == ctx_hash(ctx())

    def test_empty_string_constant(self):
        # FNV-1a 64 offset basis: the algorithm's published empty-input value.
        assert fnv1a_64("") == 14695981039346656037

    def test_collisions_match_birthday_expectation(self):
        # 10^6 distinct contexts in a 64-bit space: expected collisions
        # ~n^2 / 2^65 = 2.7e-8, so observing even one would be a defect.
        seen = set()
        for i in range(1_000_000):
            seen.add(fnv1a_64(f"user u{i % 997} | query {i} | session {i * 31:x}"))
        assert len(seen) == 1_000_000


class TestCache:
    def test_ttl_expiry_absolute(self):
        cache = SIDCache()
        c = ctx()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)], ts=NOW, ttl=100))
        assert cache.get(ctx_hash(c), NOW + 100) is not None
        assert cache.get(ctx_hash(c), NOW + 101) is None

    def test_persistence_roundtrip(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        cache = SIDCache(persist_path=path)
        c = ctx()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)]))
        cache.put(entry_for(c, [SIDPrefix(2, 2, 20)]))   # overwrite, later line wins
        restored = SIDCache()
        restored.load(path)
        got = restored.get(ctx_hash(c), NOW)
        assert got is not None and got.prefixes == (SIDPrefix(2, 2, 20),)


class TestMergeMatches:
    def test_dedupes_keeping_best_score(self):
        a = [MatchResult("x", 0.5, 3), MatchResult("y", 1.0, 0)]
        b = [MatchResult("x", 0.8, 1)]
        merged = {m.article_id: m for m in merge_matches([a, b])}
        assert merged["x"].score == 0.8
        assert merged["y"].score == 1.0


class TestFastTrack:
    def make_world(self, n_extra=10):
        arts = [art(i, s3=10 + (i % 3)) for i in range(n_extra)]
        pool = NewsPool(arts)
        return pool, build_index(pool)

    def test_warm_cache_hit(self):
        pool, index = self.make_world()
        cache = SIDCache()
        c = ctx()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)]))
        resp = fast_track(c, cache, index, pool, c.profile, now=NOW)
        assert resp.served_from == "cache"
        assert len(resp.articles) >= 1
        assert resp.pool_version == pool.version
        assert resp.latency.total_ms > 0

    def test_miss_schedules_enhance_and_serves_level3(self):
        pool, index = self.make_world()
        cache = SIDCache()
        scheduled = []
        resp = fast_track(ctx(), cache, index, pool, ctx().profile, now=NOW,
                          schedule_enhance=scheduled.append)
        assert resp.served_from == "fallback_level_3"
        assert len(scheduled) == 1

    def test_miss_without_profile_categories_goes_trending(self):
        pool, index = self.make_world()
        profile = UserProfile(user_id="nobody")
        c = route(profile, EMPTY_HISTORY, "q", tau=10)
        resp = fast_track(c, SIDCache(), index, pool, profile, now=NOW)
        assert resp.served_from == "fallback_level_4"

    def test_expired_entry_is_a_miss(self):
        pool, index = self.make_world()
        cache = SIDCache()
        c = ctx()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)], ts=NOW - 90_000))
        resp = fast_track(c, cache, index, pool, c.profile, now=NOW)
        assert resp.served_from == "fallback_level_3"

    def test_insufficient_level1_descends_to_level2(self):
        # Exactly 2 articles inside delta=5; 1 more at distance 8 that only
        # the broadened delta=10 window reaches.
        arts = [art(0, s3=10), art(1, s3=12), art(2, s3=18)]
        pool = NewsPool(arts)
        index = build_index(pool)
        cache = SIDCache()
        c = ctx()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)]))
        resp = fast_track(c, cache, index, pool, c.profile, now=NOW)
        assert resp.served_from == "fallback_level_2"
        assert {a.article_id for a in resp.articles} == {"d000", "d001", "d002"}

    def test_vanished_bucket_cascades_to_level3(self):
        pool, index = self.make_world()
        c = ctx()
        cache = SIDCache()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)]))
        # Refresh removes every article in bucket (1,1); add one in another
        # bucket with the profile's category so level 3 can serve.
        survivor = Article(id="other", title="", category="technology", tags=(),
                           published_at=NOW, sid=SID(5, 5, 5, 0))
        new_pool = refresh(pool, add=[survivor], remove=[a.id for a in pool.articles])
        new_index = build_index(new_pool)
        resp = fast_track(c, cache, new_index, new_pool, c.profile, now=NOW)
        assert resp.served_from == "fallback_level_3"
        assert resp.articles[0].article_id == "other"

    def test_snapshot_consistency_enforced(self):
        pool, index = self.make_world()
        stale = refresh(pool)
        with pytest.raises(ConsistencyError):
            fast_track(ctx(), SIDCache(), index, stale, ctx().profile, now=NOW)

    def test_empty_pool_is_error(self):
        pool = NewsPool([])
        index = build_index(pool)
        with pytest.raises(EmptyPoolError):
            fast_track(ctx(), SIDCache(), index, pool, ctx().profile, now=NOW)


class TestFallbackCascade:
    def test_level1_success_reports_origin(self):
        pool = NewsPool([art(i, s3=10 + i) for i in range(5)])
        index = build_index(pool)
        resp = fallback_cascade(ctx(), index, pool, ctx().profile, start_level=1,
                                prefixes=(SIDPrefix(1, 1, 10),), origin="enhance", now=NOW)
        assert resp.served_from == "enhance"

    def test_level_sequence_2_then_3(self):
        # Prefix bucket does not exist; level 2 broadening stays empty;
        # level 3 serves the profile category.
        pool = NewsPool([art(0, s1=9, s2=9, s3=9)])
        index = build_index(pool)
        resp = fallback_cascade(ctx(), index, pool, ctx().profile, start_level=2,
                                prefixes=(SIDPrefix(1, 1, 10),), now=NOW)
        assert resp.served_from == "fallback_level_3"

    def test_terminal_trending(self):
        pool = NewsPool([art(0, category="weather")])
        index = build_index(pool)
        profile = UserProfile(user_id="u", declared_interests=("sports",))
        c = route(profile, EMPTY_HISTORY, "q", tau=10)
        resp = fallback_cascade(c, index, pool, profile, start_level=3, now=NOW)
        assert resp.served_from == "fallback_level_4"
        assert len(resp.articles) == 1

    def test_level3_prefers_click_counts(self):
        arts = [art(0, age_hours=5.0), art(1, age_hours=1.0), art(2, age_hours=10.0)]
        pool = NewsPool(arts)
        index = build_index(pool)
        clicks = {"d002": 50, "d000": 10, "d001": 1}
        resp = fallback_cascade(ctx(), index, pool, ctx().profile, start_level=3,
                                now=NOW, click_counts=clicks, k=2)
        assert {a.article_id for a in resp.articles} <= {"d000", "d002"}

    def test_empty_pool(self):
        pool = NewsPool([])
        with pytest.raises(EmptyPoolError):
            fallback_cascade(ctx(), build_index(pool), pool, ctx().profile, start_level=4)


class TestEnhanceTrack:
    def test_installs_entry_and_read_through(self):
        pool = NewsPool([art(i) for i in range(5)])
        index = build_index(pool)
        cache = SIDCache()
        c = ctx()
        missed = fast_track(c, cache, index, pool, c.profile, now=NOW)
        assert missed.served_from == "fallback_level_3"
        entry = enhance_track(c, StaticGenerator([SIDPrefix(1, 1, 10)]), cache, now=NOW)
        assert entry is not None
        hit = fast_track(c, cache, index, pool, c.profile, now=NOW)
        assert hit.served_from == "cache"

    def test_empty_output_no_write(self):
        cache = SIDCache()
        assert enhance_track(ctx(), StaticGenerator([]), cache, now=NOW) is None
        assert len(cache) == 0

    def test_generator_failure_leaves_cache_untouched(self, caplog):
        cache = SIDCache()
        with caplog.at_level("ERROR"):
            assert enhance_track(ctx(), FailingGenerator(), cache, now=NOW) is None
        assert len(cache) == 0

    def test_prefix_cap(self):
        cache = SIDCache()
        many = [SIDPrefix(1, 1, i) for i in range(30)]
        entry = enhance_track(ctx(), StaticGenerator(many), cache, now=NOW)
        assert len(entry.prefixes) == 10

    def test_concurrent_last_writer_wins(self):
        cache = SIDCache()
        c = ctx()
        h = ctx_hash(c)
        workers = []
        outputs = [[SIDPrefix(i % 32, i % 64, i % 128)] for i in range(16)]

        def run(prefixes):
            enhance_track(c, StaticGenerator(prefixes), cache, now=NOW)

        for out in outputs:
            workers.append(threading.Thread(target=run, args=(out,)))
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        final = cache.get(h, NOW)
        # Entry must be one of the complete written values, never a blend.
        assert final.prefixes in {tuple(o) for o in outputs}


class TestWarmCache:
    def test_presets_installed_and_served(self):
        pool = NewsPool([art(i) for i in range(6)])
        index = build_index(pool)
        profile = UserProfile(user_id="u1", declared_interests=("technology",))
        cache = SIDCache()
        n = warm_cache([profile], PoolSampledGenerator(pool, seed=1), cache, now=NOW)
        assert n == 1
        preset_ctx = route(profile, EMPTY_HISTORY, "recommend technology news", tau=10)
        resp = fast_track(preset_ctx, cache, index, pool, profile, now=NOW)
        assert resp.served_from == "cache"

    def test_no_signal_no_entries(self):
        cache = SIDCache()
        n = warm_cache([UserProfile(user_id="u")], StaticGenerator([SIDPrefix(1, 1, 1)]),
                       cache, now=NOW)
        assert n == 0 and len(cache) == 0

    def test_at_most_one_per_preset(self):
        profile = UserProfile(
            user_id="u1",
            declared_interests=("a", "b"),
            longterm_prefs_30d=(("c", 0.2),),
        )
        cache = SIDCache()
        n = warm_cache([profile], StaticGenerator([SIDPrefix(1, 1, 1)]), cache, now=NOW)
        assert n == 3 and len(cache) == 3


class TestMetrics:
    def test_percentile(self):
        vals = list(map(float, range(1, 101)))
        assert percentile(vals, 0.50) == 51.0
        assert percentile(vals, 0.95) == 95.0
        assert percentile([], 0.95) == 0.0

    def test_collector_rates(self):
        pool = NewsPool([art(i) for i in range(5)])
        index = build_index(pool)
        cache = SIDCache()
        collector = MetricsCollector()
        c = ctx()
        cache.put(entry_for(c, [SIDPrefix(1, 1, 10)]))
        collector.record(fast_track(c, cache, index, pool, c.profile, now=NOW))
        c2 = ctx(query="other")
        collector.record(fast_track(c2, cache, index, pool, c2.profile, now=NOW))
        snap = collector.snapshot()
        assert snap.requests == 2
        assert snap.cache_hit_rate == pytest.approx(0.5)
        assert snap.fallback_level_rates["cache"] == pytest.approx(0.5)
        assert snap.fallback_level_rates["fallback_level_3"] == pytest.approx(0.5)
        assert snap.latency_p95_ms >= snap.latency_p50_ms >= 0.0


class TestEnhanceWorkers:
    def test_async_install(self):
        cache = SIDCache()
        gen = StaticGenerator([SIDPrefix(2, 2, 2)])
        with EnhanceWorkers(cache, gen, workers=2) as workers:
            for i in range(8):
                workers.schedule(ctx(query=f"q{i}"))
        assert workers.scheduled == 8
        assert len(cache) == 8
