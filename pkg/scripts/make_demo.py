#!/usr/bin/env python3
"""Regenerate the shipped demo assets under assets/demo/.

Produces a small synthetic fixture, a mock replay file simulating an
external model's recorded prefix outputs (grounded in the pool, roughly
30% top-1 L1), and an example config. Everything is seeded, so rerunning
reproduces the committed files byte-for-byte.

Usage: python scripts/make_demo.py [outdir]
"""

import json
import sys
from pathlib import Path

import numpy as np

from sidground.fixture import FixtureSpec, make_synthetic_fixture, write_fixture
from sidground.generator import ReplayRecord, write_replay
from sidground.hashing import derive_seed
from sidground.matcher import SIDPrefix

SEED = 2024


def main(outdir: Path):
    spec = FixtureSpec(
        seed=SEED,
        n_articles=400,
        n_users=60,
        n_samples=200,
        embeddings=True,
        embedding_cap=400,
        dim=16,
        category_alpha=1.0,
        pool_category_skew=0.5,
    )
    fixture = make_synthetic_fixture(spec)
    paths = write_fixture(fixture, outdir)

    articles = fixture.pool.articles
    records = []
    for sample in fixture.samples:
        rng = np.random.default_rng(derive_seed(SEED, "demo-replay", sample.sample_id))
        target = fixture.pool.by_id[sample.target_article_id]
        prefixes = []
        if rng.random() < 0.35:
            prefixes.append(SIDPrefix(target.sid.s1, target.sid.s2, target.sid.s3))
        while len(prefixes) < 10:
            a = articles[int(rng.integers(len(articles)))]
            prefixes.append(SIDPrefix(a.sid.s1, a.sid.s2, a.sid.s3))
        records.append(ReplayRecord(
            sample_id=sample.sample_id,
            prefixes=tuple(prefixes),
            reason=f"inferred interest in {target.category}",
        ))
    replay_path = outdir / "replay.jsonl"
    write_replay(records, replay_path)
    paths["replay"] = str(replay_path)

    config_path = outdir / "config.json"
    config_path.write_text(json.dumps({
        "delta": 5,
        "k": 10,
        "tau": 10,
        "lam": 0.1,
        "ttl_seconds": 86400,
        "layer_sizes": [32, 64, 128, 1024],
        "seed": 42,
        "resamples": 10000,
        "port": 8080,
    }, indent=2) + "\n")
    paths["config"] = str(config_path)

    print(json.dumps(paths, indent=2))


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("assets/demo")
    main(out)
