"""Unified command-line entry point.

    sidground codebook train|assign|stats ...
    sidground pool ingest|refresh|split ...
    sidground match ...
    sidground padr route ...
    sidground gen run ...
    sidground rank ...
    sidground serve ... | bench ...
    sidground eval run|fixture ...

Exit codes: 0 success, 1 usage error, 2 data error. Config precedence:
flag > SIDGROUND_* env (port, data dir, seed) > --config file > default.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import re
import sys
from datetime import datetime, timezone

import numpy as np

from . import codebook as cb
from . import pool as poolmod
from .config import parse_layer_sizes, resolve_config
from .dualtrack import SIDCache, run_benchmark, warm_cache
from .errors import SidgroundError
from .evaluation import load_samples
from .fixture import FixtureSpec, make_synthetic_fixture, write_fixture
from .generator import from_spec as generator_from_spec
from .generator import PoolSampledGenerator
from .matcher import fuzzy_match, grid_search_delta, validate_prefix
from .padr import (
    EMPTY_HISTORY,
    load_histories,
    load_profiles,
    route,
)
from .pool import build_index, load_snapshot, save_snapshot, write_article_jsonl
from .ranking import rank as rank_candidates
from .report import run_eval, write_report
from .server import RecommendService, serve_forever

logger = logging.getLogger(__name__)

_COMMANDS = ("codebook", "pool", "match", "padr", "gen", "rank", "serve", "bench", "eval")


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors and typo suggestions."""

    def error(self, message):
        m = re.search(r"invalid choice: '([^']+)'", message)
        if m:
            close = difflib.get_close_matches(m.group(1), _COMMANDS, n=2)
            if close:
                message += f" (did you mean: {', '.join(close)}?)"
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_prefix(text: str):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise SidgroundError(f"--prefix expects s1,s2,s3, got {text!r}")
    return validate_prefix(tuple(int(p) for p in parts))


def _parse_cutoff(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _emit(doc):
    print(json.dumps(doc, indent=2))


def build_parser() -> _Parser:
    top = _Parser(prog="sidground", description=__doc__,
                  formatter_class=argparse.RawDescriptionHelpFormatter)
    top.add_argument("--config", help="JSON config file", default=None)
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", metavar="command")

    # codebook
    p_cb = sub.add_parser("codebook", help="train/apply semantic-ID codebooks")
    cb_sub = p_cb.add_subparsers(dest="subcommand", metavar="subcommand")
    p = cb_sub.add_parser("train", help="train a residual k-means codebook")
    p.add_argument("--corpus", required=True)
    p.add_argument("--layers", default=None, help="K1,K2,K3,K4 (default 32,64,128,1024)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=25)
    p.add_argument("--out", required=True)
    p = cb_sub.add_parser("assign", help="assign SIDs to an embedding corpus")
    p.add_argument("--codebook", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p = cb_sub.add_parser("stats", help="occupancy and reconstruction error")
    p.add_argument("--codebook", required=True)
    p.add_argument("--corpus", required=True)

    # pool
    p_pool = sub.add_parser("pool", help="ingest/refresh/split article pools")
    pool_sub = p_pool.add_subparsers(dest="subcommand", metavar="subcommand")
    p = pool_sub.add_parser("ingest", help="article JSONL -> version-1 snapshot")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p = pool_sub.add_parser("refresh", help="base snapshot + add/remove -> next snapshot")
    p.add_argument("--base", required=True)
    p.add_argument("--add", default=None, help="article JSONL to add")
    p.add_argument("--remove", default=None, help="file with one article id per line")
    p.add_argument("--out", required=True)
    p = pool_sub.add_parser("split", help="temporal train/test split")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--cutoff", required=True, help="ISO8601 timestamp or epoch seconds")
    p.add_argument("--train-out", default=None)
    p.add_argument("--test-out", default=None)

    # match
    p = sub.add_parser("match", help="fuzzy-match a prefix against a snapshot")
    p.add_argument("--index", required=True, help="pool snapshot to index")
    p.add_argument("--prefix", required=True, help="s1,s2,s3")
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--deltas", default=None, help="comma list switches to grid mode")

    # padr
    p_padr = sub.add_parser("padr", help="context routing")
    padr_sub = p_padr.add_subparsers(dest="subcommand", metavar="subcommand")
    p = padr_sub.add_parser("route", help="route one request and print the context")
    p.add_argument("--profile", required=True, help="profile JSONL")
    p.add_argument("--history", default=None, help="history JSONL")
    p.add_argument("--query", required=True)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--user-id", default=None, help="defaults to the first profile in the file")

    # gen
    p_gen = sub.add_parser("gen", help="run a prefix generator")
    gen_sub = p_gen.add_subparsers(dest="subcommand", metavar="subcommand")
    p = gen_sub.add_parser("run", help="generate prefixes for a context request")
    p.add_argument("--generator", required=True,
                   help="random|popular|histpop|profile|replay:<path>")
    p.add_argument("--context", required=True,
                   help="JSON file: {profile, clicks, query, tau?, sample_id?}")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--pool", default=None, help="training pool (popular/profile generators)")

    # rank
    p = sub.add_parser("rank", help="match a prefix and rank for a profile")
    p.add_argument("--index", required=True, help="pool snapshot to index")
    p.add_argument("--profile", required=True)
    p.add_argument("--user-id", default=None)
    p.add_argument("--prefix", required=True)
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--now", type=float, default=None, help="epoch seconds (default: pool as_of)")

    # serve
    p = sub.add_parser("serve", help="HTTP service mode")
    p.add_argument("--pool", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--histories", default=None)
    p.add_argument("--generator", required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ttl", type=int, default=None)
    p.add_argument("--warm", action="store_true", help="warm the cache from preset queries")

    # bench
    p = sub.add_parser("bench", help="in-process fast-track latency benchmark")
    p.add_argument("--pool", required=True)
    p.add_argument("--requests", type=int, default=10_000)
    p.add_argument("--concurrency", type=int, default=8)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)

    # eval
    p_eval = sub.add_parser("eval", help="evaluation harness")
    eval_sub = p_eval.add_subparsers(dest="subcommand", metavar="subcommand")
    p = eval_sub.add_parser("run", help="score a generator on eval samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--profiles", default=None)
    p.add_argument("--histories", default=None)
    p.add_argument("--delta", type=int, default=None)
    p.add_argument("--tau", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resamples", type=int, default=None)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p = eval_sub.add_parser("fixture", help="generate a synthetic fixture")
    p.add_argument("--spec", required=True, help="FixtureSpec JSON file")
    p.add_argument("--out", required=True, help="output directory")

    return top


def _require_sub(args, parser) -> None:
    if getattr(args, "subcommand", "missing") is None:
        parser.error(f"{args.command}: missing subcommand")


def _cmd_codebook(args, cfg) -> int:
    if args.subcommand == "train":
        _, corpus = cb.load_embedding_corpus(args.corpus)
        layers = parse_layer_sizes(args.layers) if args.layers else cfg.layer_sizes
        seed = args.seed if args.seed is not None else cfg.seed
        book = cb.train_codebook(corpus, layer_sizes=layers, seed=seed,
                                 max_iters=args.max_iters)
        cb.save_codebook(book, args.out)
        _emit({"out": args.out, "dim": book.dim, "layer_sizes": list(book.layer_sizes),
               "trained_on": book.trained_on})
    elif args.subcommand == "assign":
        book = cb.load_codebook(args.codebook)
        ids, corpus = cb.load_embedding_corpus(args.corpus)
        sids = cb.assign_sids(book, corpus)
        with open(args.out, "w", encoding="utf-8") as f:
            for aid, sid in zip(ids, sids):
                f.write(json.dumps({"id": aid, "sid": list(sid)}) + "\n")
        _emit({"out": args.out, "assigned": len(sids)})
    elif args.subcommand == "stats":
        book = cb.load_codebook(args.codebook)
        _, corpus = cb.load_embedding_corpus(args.corpus)
        _emit({
            "occupancy": cb.occupancy(book, corpus),
            "reconstruction_error": cb.reconstruction_error(book, corpus),
            "corpus_size": int(corpus.shape[0]),
        })
    return 0


def _read_id_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def _cmd_pool(args, cfg) -> int:
    if args.subcommand == "ingest":
        pool = poolmod.ingest(args.infile, layer_sizes=cfg.layer_sizes)
        save_snapshot(pool, args.out)
        _emit({"out": args.out, "articles": len(pool), "version": pool.version})
    elif args.subcommand == "refresh":
        base = load_snapshot(args.base, layer_sizes=cfg.layer_sizes)
        add = load_snapshot(args.add, layer_sizes=cfg.layer_sizes).articles if args.add else ()
        remove = _read_id_lines(args.remove) if args.remove else ()
        new_pool = poolmod.refresh(base, add=add, remove=remove)
        save_snapshot(new_pool, args.out)
        _emit({"out": args.out, "articles": len(new_pool), "version": new_pool.version})
    elif args.subcommand == "split":
        pool = load_snapshot(args.infile, layer_sizes=cfg.layer_sizes)
        cutoff = _parse_cutoff(args.cutoff)
        train, test = poolmod.temporal_split(pool.articles, cutoff)
        train_out = args.train_out or args.infile + ".train.jsonl"
        test_out = args.test_out or args.infile + ".test.jsonl"
        write_article_jsonl(train, train_out)
        write_article_jsonl(test, test_out)
        _emit({"train": {"path": train_out, "articles": len(train)},
               "test": {"path": test_out, "articles": len(test)},
               "cutoff": cutoff})
    return 0


def _cmd_match(args, cfg) -> int:
    pool = load_snapshot(args.index, layer_sizes=cfg.layer_sizes)
    index = build_index(pool)
    prefix = _parse_prefix(args.prefix)
    if args.deltas:
        deltas = [int(d) for d in args.deltas.split(",") if d.strip()]
        rows = grid_search_delta([prefix], deltas, index)
        _emit({"prefix": list(prefix), "grid": rows})
        return 0
    delta = args.delta if args.delta is not None else cfg.delta
    k = args.k if args.k is not None else cfg.k
    results = fuzzy_match(prefix, index, delta=delta, k=k)
    _emit({
        "prefix": list(prefix), "delta": delta, "k": k,
        "results": [
            {"article_id": r.article_id, "score": r.score, "s3_distance": r.s3_distance}
            for r in results
        ],
    })
    return 0


def _pick_profile(profiles: dict, user_id):
    if user_id is not None:
        if user_id not in profiles:
            raise SidgroundError(f"user_id {user_id!r} not in profile file")
        return profiles[user_id]
    if not profiles:
        raise SidgroundError("profile file holds no profiles")
    return next(iter(profiles.values()))


def _cmd_padr(args, cfg) -> int:
    profiles = load_profiles(args.profile)
    profile = _pick_profile(profiles, args.user_id)
    histories = load_histories(args.history) if args.history else {}
    history = histories.get(profile.user_id, EMPTY_HISTORY)
    tau = args.tau if args.tau is not None else cfg.tau
    ctx = route(profile, history, args.query, tau=tau)
    _emit({"path": ctx.path, "indicator": ctx.indicator, "rendered": ctx.rendered})
    return 0


def _cmd_gen(args, cfg) -> int:
    with open(args.context, encoding="utf-8") as f:
        req = json.load(f)
    from .padr import history_from_record, profile_from_record
    from dataclasses import replace as dc_replace

    profile = profile_from_record(req["profile"]) if req.get("profile") else None
    if profile is None:
        raise SidgroundError("context file needs a 'profile' object")
    _, history = history_from_record(
        {"user_id": profile.user_id, "clicks": req.get("clicks", [])}
    )
    tau = int(req.get("tau", cfg.tau))
    ctx = route(profile, history, str(req.get("query", "")), tau=tau)
    if req.get("sample_id") is not None:
        ctx = dc_replace(ctx, sample_id=str(req["sample_id"]))
    training_pool = load_snapshot(args.pool, layer_sizes=cfg.layer_sizes) if args.pool else None
    seed = args.seed if args.seed is not None else cfg.seed
    k = args.k if args.k is not None else cfg.k
    gen = generator_from_spec(args.generator, training_pool=training_pool, seed=seed,
                              k=k, layer_sizes=cfg.layer_sizes)
    out = gen.generate(ctx)
    _emit({
        "path": ctx.path,
        "prefixes": [list(p) for p in out.prefixes],
        "reason": out.reason,
    })
    return 0


def _cmd_rank(args, cfg) -> int:
    pool = load_snapshot(args.index, layer_sizes=cfg.layer_sizes)
    index = build_index(pool)
    profiles = load_profiles(args.profile)
    profile = _pick_profile(profiles, args.user_id)
    prefix = _parse_prefix(args.prefix)
    delta = args.delta if args.delta is not None else cfg.delta
    k = args.k if args.k is not None else cfg.k
    lam = args.lam if args.lam is not None else cfg.lam
    now = args.now if args.now is not None else (pool.as_of or None)
    matches = fuzzy_match(prefix, index, delta=delta, k=k)
    ranked = rank_candidates(matches, pool, profile, now=now or 0.0, lam=lam)
    _emit({
        "prefix": list(prefix), "delta": delta, "lambda": lam,
        "results": [
            {
                "article_id": r.article_id,
                "title": pool.by_id[r.article_id].title,
                "category": pool.by_id[r.article_id].category,
                "match_score": r.match_score,
                "interest_points": r.interest_points,
                "freshness": r.freshness,
                "final_score": r.final_score,
            }
            for r in ranked
        ],
    })
    return 0


def _cmd_serve(args, cfg) -> int:
    pool = load_snapshot(args.pool, layer_sizes=cfg.layer_sizes)
    profiles = load_profiles(args.profiles)
    histories = load_histories(args.histories) if args.histories else {}
    generator = generator_from_spec(args.generator, training_pool=pool, seed=cfg.seed,
                                    k=cfg.k, layer_sizes=cfg.layer_sizes)
    ttl = args.ttl if args.ttl is not None else cfg.ttl_seconds
    port = args.port if args.port is not None else cfg.port
    service = RecommendService(
        pool, profiles, generator, histories=histories,
        delta=cfg.delta, k=cfg.k, lam=cfg.lam, tau=cfg.tau, ttl_seconds=ttl,
    )
    if args.warm:
        n = warm_cache(profiles.values(), generator, service.cache, tau=cfg.tau,
                       ttl_seconds=ttl)
        logger.info("warmed %d cache entries", n)
    serve_forever(service, args.host, port)
    return 0


def _cmd_bench(args, cfg) -> int:
    pool = load_snapshot(args.pool, layer_sizes=cfg.layer_sizes)
    index = build_index(pool)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    from .padr import Demographics, UserProfile

    cats = sorted({a.category for a in pool.articles}) or ["news"]
    contexts = []
    for i in range(args.users):
        cat = cats[int(rng.integers(len(cats)))]
        profile = UserProfile(
            user_id=f"bench{i:05d}",
            demographics=Demographics(),
            declared_interests=(cat,),
        )
        contexts.append((route(profile, EMPTY_HISTORY, f"recommend {cat} news", tau=cfg.tau),
                         profile))
    cache = SIDCache()
    gen = PoolSampledGenerator(pool, seed=seed, k=cfg.k)
    for ctx, _ in contexts:
        from .dualtrack import enhance_track
        enhance_track(ctx, gen, cache)
    stats = run_benchmark(contexts, cache, index, pool, requests=args.requests,
                          concurrency=args.concurrency, delta=cfg.delta, k=cfg.k, lam=cfg.lam)
    _emit(stats)
    return 0


def _cmd_eval(args, cfg) -> int:
    if args.subcommand == "fixture":
        spec = FixtureSpec.from_file(args.spec)
        fixture = make_synthetic_fixture(spec)
        paths = write_fixture(fixture, args.out)
        _emit({"out": args.out, "paths": paths, "articles": len(fixture.pool),
               "users": len(fixture.profiles), "samples": len(fixture.samples)})
        return 0
    samples = load_samples(args.samples)
    pool = load_snapshot(args.pool, layer_sizes=cfg.layer_sizes)
    profiles = load_profiles(args.profiles) if args.profiles else {}
    histories = load_histories(args.histories) if args.histories else {}
    seed = args.seed if args.seed is not None else cfg.seed
    generator = generator_from_spec(args.generator, training_pool=pool, seed=seed,
                                    k=cfg.k, layer_sizes=cfg.layer_sizes)
    report = run_eval(
        samples, pool, generator, profiles=profiles, histories=histories,
        tau=args.tau if args.tau is not None else cfg.tau,
        delta=args.delta if args.delta is not None else cfg.delta,
        seed=seed,
        resamples=args.resamples if args.resamples is not None else cfg.resamples,
    )
    if args.out:
        write_report(report, args.out)
    print(report.render_text())
    return 0


_PATH_ATTRS = (
    "corpus", "codebook", "out", "infile", "base", "add", "remove", "index",
    "profile", "history", "context", "pool", "profiles", "histories",
    "samples", "spec", "train_out", "test_out",
)


def _resolve_paths(args, cfg):
    for attr in _PATH_ATTRS:
        if hasattr(args, attr):
            setattr(args, attr, cfg.resolve_path(getattr(args, attr)))
    gen_spec = getattr(args, "generator", None)
    if gen_spec and gen_spec.startswith("replay:"):
        args.generator = "replay:" + cfg.resolve_path(gen_spec.split(":", 1)[1])


def dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_help()
        return 0
    try:
        cfg = resolve_config(flags={}, config_path=args.config)
        _resolve_paths(args, cfg)
        if args.command == "codebook":
            _require_sub(args, parser)
            return _cmd_codebook(args, cfg)
        if args.command == "pool":
            _require_sub(args, parser)
            return _cmd_pool(args, cfg)
        if args.command == "match":
            return _cmd_match(args, cfg)
        if args.command == "padr":
            _require_sub(args, parser)
            return _cmd_padr(args, cfg)
        if args.command == "gen":
            _require_sub(args, parser)
            return _cmd_gen(args, cfg)
        if args.command == "rank":
            return _cmd_rank(args, cfg)
        if args.command == "serve":
            return _cmd_serve(args, cfg)
        if args.command == "bench":
            return _cmd_bench(args, cfg)
        if args.command == "eval":
            _require_sub(args, parser)
            return _cmd_eval(args, cfg)
        parser.error(f"unknown command {args.command!r}")
    except SidgroundError as e:
        print(f"sidground: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"sidground: error: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
