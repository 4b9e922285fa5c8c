import numpy as np
import pytest

from sidground.codebook import SID
from sidground.fixture import FixtureSpec, make_synthetic_fixture
from sidground.matcher import SIDPrefix
from sidground.pool import Article, NewsPool

_acceptance_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _acceptance_results.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"{outcome.upper():>6}  {name}")


def random_pool(seed: int, n: int, s1_range=32, s2_range=64, s3_range=128,
                version: int = 1) -> NewsPool:
    """Small random pool with clustered (s1,s2) mass so buckets get dense
    enough to exercise ties and windows."""
    rng = np.random.default_rng(seed)
    # Restrict half the articles to a few buckets to create collisions.
    s1 = np.where(rng.random(n) < 0.5, rng.integers(0, min(4, s1_range), n),
                  rng.integers(0, s1_range, n))
    s2 = np.where(rng.random(n) < 0.5, rng.integers(0, min(4, s2_range), n),
                  rng.integers(0, s2_range, n))
    s3 = rng.integers(0, s3_range, n)
    s4 = rng.integers(0, 1024, n)
    published = 1_700_000_000.0 - rng.integers(0, 72 * 3600, n)
    cats = rng.integers(0, 8, n)
    articles = [
        Article(
            id=f"p{seed}a{i:05d}",
            title=f"article {i}",
            category=f"cat{cats[i]}",
            tags=(f"tag{int(s1[i])}",),
            published_at=float(published[i]),
            sid=SID(int(s1[i]), int(s2[i]), int(s3[i]), int(s4[i])),
        )
        for i in range(n)
    ]
    return NewsPool(articles, version=version)


def brute_force_match(prefix: SIDPrefix, pool: NewsPool, delta: int, k: int):
    """Independent linear-scan realization of the match predicate, the
    scoring formula, and the documented tie-break chain."""
    out = []
    for a in pool.articles:
        d = abs(a.sid.s3 - prefix.s3)
        if a.sid.s1 == prefix.s1 and a.sid.s2 == prefix.s2 and d <= delta:
            out.append((a, 1.0 - d / (delta + 1), d))
    out.sort(key=lambda c: (-c[1], -c[0].published_at, c[0].id))
    return [(a.id, score, d) for a, score, d in out[:k]]


@pytest.fixture(scope="session")
def std_fixture():
    """Standard mid-size synthetic world shared across test modules."""
    spec = FixtureSpec(seed=7, n_articles=3000, n_users=300, n_samples=900,
                       embeddings=False)
    return make_synthetic_fixture(spec)


@pytest.fixture(scope="session")
def emb_fixture():
    """Hierarchically clustered embedding corpus for codebook tests."""
    spec = FixtureSpec(seed=11, n_articles=2500, n_users=10, n_samples=0,
                       embeddings=True, embedding_cap=2500, dim=32)
    return make_synthetic_fixture(spec)
