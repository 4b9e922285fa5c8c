"""News pool data model: articles, immutable snapshots, prefix index.

A NewsPool is an immutable snapshot with a monotonically increasing
version. Refreshing builds a whole new snapshot and leaves the old one
untouched, so any number of readers can keep serving from the snapshot
they grabbed while a writer publishes the next one (atomic reference
swap; see dualtrack).

The PrefixIndex realizes the (s1,s2) -> sorted-s3 lookup the matcher
needs: one bucket per (s1,s2) pair holding (s3, article_id) tuples
sorted ascending, so a tolerance window on s3 is a binary search plus a
short scan regardless of pool size.
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .codebook import SID, DEFAULT_LAYER_SIZES
from .errors import DuplicateKeyError, RecordParseError, SidRangeError

logger = logging.getLogger(__name__)

_SNAPSHOT_META_KEY = "snapshot_meta"

ARTICLE_FIELDS = ("id", "title", "category", "tags", "published_at", "sid")


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    category: str
    tags: tuple[str, ...]
    published_at: float        # UTC seconds
    sid: SID

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "category": self.category,
            "tags": list(self.tags),
            "published_at": self.published_at,
            "sid": list(self.sid),
        }


def validate_sid(values: Sequence[int], layer_sizes=DEFAULT_LAYER_SIZES, what: str = "sid") -> SID:
    """Check a 4-element code against per-layer ranges, naming the bad layer."""
    if len(values) != 4:
        raise SidRangeError(f"{what} must have 4 layers, got {len(values)}")
    for l, (v, k) in enumerate(zip(values, layer_sizes), start=1):
        if not isinstance(v, int) or isinstance(v, bool) or not (0 <= v < k):
            raise SidRangeError(f"{what} layer s{l} value {v!r} outside [0, {k - 1}]")
    return SID(*values)


def article_from_record(rec: dict, line: int | None = None, layer_sizes=DEFAULT_LAYER_SIZES) -> Article:
    """Build an Article from a parsed JSONL record, validating invariants."""
    try:
        sid = validate_sid(rec["sid"], layer_sizes, what="sid")
        published_at = float(rec["published_at"])
        if published_at <= 0:
            raise RecordParseError("published_at must be > 0", line=line)
        return Article(
            id=str(rec["id"]),
            title=str(rec.get("title", "")),
            category=str(rec.get("category", "")),
            tags=tuple(str(t) for t in rec.get("tags", ())),
            published_at=published_at,
            sid=sid,
        )
    except KeyError as e:
        raise RecordParseError(f"missing field {e.args[0]!r}", line=line) from e


class NewsPool:
    """Immutable article snapshot. Do not mutate after construction."""

    def __init__(self, articles: Iterable[Article], version: int = 1, as_of: float = 0.0):
        arts = list(articles)
        by_id: dict[str, Article] = {}
        for a in arts:
            if a.id in by_id:
                raise DuplicateKeyError(f"duplicate article id {a.id!r}")
            by_id[a.id] = a
        self.articles: tuple[Article, ...] = tuple(arts)
        self.by_id: dict[str, Article] = by_id
        self.version = int(version)
        self.as_of = float(as_of)
        self._recency: tuple[Article, ...] | None = None
        self._by_category: dict[str, list[Article]] | None = None

    def __len__(self) -> int:
        return len(self.articles)

    def __contains__(self, article_id: str) -> bool:
        return article_id in self.by_id

    def recency_order(self) -> tuple[Article, ...]:
        """Articles newest-first (ties by id), computed once per snapshot.

        Lazy init is benign under concurrent readers: a race recomputes
        the same tuple.
        """
        if self._recency is None:
            self._recency = tuple(
                sorted(self.articles, key=lambda a: (-a.published_at, a.id))
            )
        return self._recency

    def category_recency(self) -> dict[str, list[Article]]:
        """Per-category newest-first article lists, computed once."""
        if self._by_category is None:
            grouped: dict[str, list[Article]] = {}
            for a in self.recency_order():
                grouped.setdefault(a.category, []).append(a)
            self._by_category = grouped
        return self._by_category


@dataclass(frozen=True)
class PrefixIndex:
    """(s1,s2)-keyed index over one pool snapshot.

    buckets[(s1,s2)] is a list of (s3, article_id) sorted ascending by
    (s3, id). Holds a reference to its source pool so the matcher can
    resolve metadata without a separate lookup structure.
    """

    buckets: dict[tuple[int, int], list[tuple[int, str]]]
    built_from: int
    pool: NewsPool = field(repr=False)

    def bucket_window(self, s1: int, s2: int, s3_lo: int, s3_hi: int) -> list[tuple[int, str]]:
        """Entries with s3 in [s3_lo, s3_hi] from one bucket (may be empty)."""
        bucket = self.buckets.get((s1, s2))
        if not bucket:
            return []
        lo = bisect_left(bucket, (s3_lo,))
        hi = bisect_right(bucket, (s3_hi, "\uffff"))
        return bucket[lo:hi]


def build_index(pool: NewsPool) -> PrefixIndex:
    """Index every pool article into exactly one (s1,s2) bucket."""
    buckets: dict[tuple[int, int], list[tuple[int, str]]] = {}
    for a in pool.articles:
        buckets.setdefault((a.sid.s1, a.sid.s2), []).append((a.sid.s3, a.id))
    for bucket in buckets.values():
        bucket.sort()
    return PrefixIndex(buckets=buckets, built_from=pool.version, pool=pool)


def ingest(path, layer_sizes=DEFAULT_LAYER_SIZES, as_of: float = 0.0) -> NewsPool:
    """Read raw article JSONL into a version-1 pool.

    Rejects duplicate ids, malformed records, and out-of-range SIDs with
    the offending line number.
    """
    articles = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordParseError(f"bad JSON: {e.msg}", line=lineno) from e
            try:
                art = article_from_record(rec, line=lineno, layer_sizes=layer_sizes)
            except SidRangeError as e:
                raise SidRangeError(f"line {lineno}: {e}") from e
            if art.id in seen:
                raise DuplicateKeyError(f"line {lineno}: duplicate article id {art.id!r}")
            seen.add(art.id)
            articles.append(art)
    return NewsPool(articles, version=1, as_of=as_of)


def refresh(
    pool: NewsPool,
    add: Iterable[Article] = (),
    remove: Iterable[str] = (),
    as_of: float | None = None,
) -> NewsPool:
    """Produce the next snapshot: version+1, prior snapshot untouched.

    Removing a missing id logs a warning and continues; adding an id that
    survives the removal set raises.
    """
    remove_set = set(remove)
    for rid in remove_set:
        if rid not in pool.by_id:
            logger.warning("refresh: removing unknown article id %r", rid)
    surviving = [a for a in pool.articles if a.id not in remove_set]
    surviving_ids = {a.id for a in surviving}
    added = []
    for a in add:
        if a.id in surviving_ids:
            raise DuplicateKeyError(f"refresh: article id {a.id!r} already in pool")
        surviving_ids.add(a.id)
        added.append(a)
    return NewsPool(
        surviving + added,
        version=pool.version + 1,
        as_of=pool.as_of if as_of is None else as_of,
    )


def temporal_split(corpus: Iterable[Article], cutoff: float) -> tuple[list[Article], list[Article]]:
    """Split by publication time: train <= cutoff < test. Disjoint by
    construction; articles exactly at the cutoff go to train."""
    train, test = [], []
    for a in corpus:
        (train if a.published_at <= cutoff else test).append(a)
    return train, test


# -- Snapshot persistence ------------------------------------------------
#
# Snapshot file = one meta line ({"snapshot_meta": {...}}) followed by
# plain article JSONL. A file without a meta line (raw article JSONL)
# loads as version 1, so ingest output and snapshots share one reader.


def save_snapshot(pool: NewsPool, path):
    with open(path, "w", encoding="utf-8") as f:
        meta = {_SNAPSHOT_META_KEY: {"version": pool.version, "as_of": pool.as_of}}
        f.write(json.dumps(meta) + "\n")
        for a in pool.articles:
            f.write(json.dumps(a.to_record()) + "\n")


def load_snapshot(path, layer_sizes=DEFAULT_LAYER_SIZES) -> NewsPool:
    version, as_of = 1, 0.0
    articles = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordParseError(f"bad JSON: {e.msg}", line=lineno) from e
            if lineno == 1 and _SNAPSHOT_META_KEY in rec:
                meta = rec[_SNAPSHOT_META_KEY]
                version = int(meta.get("version", 1))
                as_of = float(meta.get("as_of", 0.0))
                continue
            art = article_from_record(rec, line=lineno, layer_sizes=layer_sizes)
            if art.id in seen:
                raise DuplicateKeyError(f"line {lineno}: duplicate article id {art.id!r}")
            seen.add(art.id)
            articles.append(art)
    return NewsPool(articles, version=version, as_of=as_of)


def write_article_jsonl(articles: Iterable[Article], path):
    with open(path, "w", encoding="utf-8") as f:
        for a in articles:
            f.write(json.dumps(a.to_record()) + "\n")
