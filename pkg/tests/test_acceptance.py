"""Acceptance criteria 1-9. Each test records one PASS/FAIL line, shown in
the terminal summary, then asserts the criterion at its stated tolerance."""

import os
import random
import resource
import time
from datetime import timedelta

import psutil

from cdnet.cli import main
from cdnet.index import load_index, mirror_at
from cdnet.metrics import (
    CallView,
    MetadataView,
    coexistence_bloat,
    dependency_counts,
    dependent_counts,
    reach,
    spearman,
)
from cdnet.resolver import UnresolvableError, changed_fraction, resolve_tree, tree_changed
from cdnet.semver import parse_version
from cdnet.serialize import write_snapshot
from cdnet.synth import SynthSpec, generate, oracle_resolve
from cdnet.unify import build_cdn, build_snapshot, link_dynamic, unify_release

from conftest import ACCEPTANCE_LINES
from oracles import view_mismatches
from test_metrics import two_version_fixture
from scenarios import (
    CHAIN_T,
    BUMP_T1,
    BUMP_T2,
    dup_graphs,
    dup_index,
    chain_graphs,
    chain_index,
    bump_index,
    random_fixture,
    random_time,
    serde_graphs,
    serde_index,
    store_of,
    ts,
)

V = parse_version


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _files(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


def test_criterion_1_chain_scenario():
    start = time.perf_counter()
    idx = chain_index()
    results = {}
    for bar_calls_used in (True, False):
        net, cdn = build_snapshot(idx, CHAIN_T, store_of(idx, chain_graphs(bar_calls_used)))
        callers = {}
        for e in cdn.edges:
            if e.caller.package != e.callee.package:
                callers.setdefault(e.callee.key, set()).add(e.caller)
        any_caller = {e.callee.key for e in cdn.edges}
        meta, call = MetadataView(net), CallView(net, cdn)
        results[bar_calls_used] = (
            len(callers.get("io::crates::Lib2v0.2.0::used", ())),
            "io::crates::Lib2v0.2.0::unused" in any_caller,
            dependency_counts(meta, "App")[1],
            dependency_counts(call, "App")[1],
        )
    elapsed = time.perf_counter() - start
    ok = results[True] == (1, False, 1, 1) and results[False][2:] == (1, 0) and elapsed < 1.0
    record(1, ok, f"with edge {results[True]}, without edge {results[False]}, {elapsed:.3f}s")


def test_criterion_2_bump_scenario():
    idx = bump_index()
    a = idx.get("A", V("1.0.0"))
    t_mid, t_late = ts(7), ts(11)
    assert BUMP_T1 < t_mid < BUMP_T2 < t_late
    before = resolve_tree(mirror_at(idx, t_mid), a, t_mid)
    after = resolve_tree(mirror_at(idx, t_late), a, t_late)
    picked = lambda tree: [str(v) for n, v in tree.nodes if n == "B"]
    changed, diff = tree_changed(before, after)
    ok = (
        picked(before) == ["1.1.0"]
        and picked(after) == ["1.2.0"]
        and changed
        and diff == {"B": ((V("1.1.0"),), (V("1.2.0"),))}
    )
    record(2, ok, f"B at t1<t<t2 {picked(before)}, after t2 {picked(after)}, changed {sorted(diff)}")


def _log_functions(second_req):
    idx = dup_index(second_req)
    tree = resolve_tree(mirror_at(idx, ts(10)), idx.get("App", V("1.0.0")), ts(10))
    g = unify_release(tree, store_of(idx, dup_graphs()))
    versions = sorted(v for n, v in tree.nodes if n == "log")
    info = sorted(n.key for n in g.nodes if n.package == "log" and n.path == "info")
    return versions, info


def test_criterion_3_duplicate_constraints():
    merged_v, merged_f = _log_functions("0.4.4")
    split_v, split_f = _log_functions("0.5.*")
    ok = (
        merged_v == [V("0.4.4")]
        and merged_f == ["io::crates::logv0.4.4::info"]
        and split_v == [V("0.4.4"), V("0.5.5")]
        and split_f == ["io::crates::logv0.4.4::info", "io::crates::logv0.5.5::info"]
    )
    record(3, ok, f"merged {[str(v) for v in merged_v]}, coexisting {[str(v) for v in split_v]} -> {split_f}")


def test_criterion_4_serde_dynamic_link():
    idx = serde_index()
    tree = resolve_tree(mirror_at(idx, ts(10)), idx.get("A", V("1.0.0")), ts(10))
    added = {}
    for with_impl in (True, False):
        g = unify_release(tree, store_of(idx, serde_graphs(with_impl)))
        linked = link_dynamic(g)
        added[with_impl] = {(e.caller.key, e.callee.key, e.dispatch) for e in linked.edges - g.edges}
    want = {("io::crates::Cv1.0.0::bar", "io::crates::Bv1.0.0::Foo::serialize(io::crates::Bv1.0.0::Foo)", "dynamic")}
    ok = added[True] == want and added[False] == set()
    record(4, ok, f"with impl {len(added[True])} edge(s), without impl {len(added[False])}")


def test_criterion_5_resolver_oracle():
    start = time.perf_counter()
    mismatches, failed_both = [], 0
    for seed in range(1000):
        fx, rng = random_fixture(seed, max_packages=50, max_versions=10)
        t = random_time(fx, rng)
        m = mirror_at(fx.index, t)
        rel = rng.choice(list(m))
        try:
            got = resolve_tree(m, rel, t)
        except UnresolvableError:
            got = None
        try:
            want = oracle_resolve(fx.index, rel, t)
        except UnresolvableError:
            want = None
        failed_both += got is None and want is None
        if got != want:
            mismatches.append(seed)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 60
    record(5, ok, f"1000 trials, {len(mismatches)} mismatches {mismatches[:5]}, {failed_both} unresolvable on both sides, {elapsed:.1f}s")


def test_criterion_6_reachability_oracle():
    start = time.perf_counter()
    bad, biggest = [], 0
    for seed in range(500):
        fx, rng = random_fixture(seed, max_packages=150, max_versions=5, callgraphs=True)
        t = random_time(fx, rng)
        store = fx.store()
        net, cdn = build_snapshot(fx.index, t, store)
        biggest = max(biggest, len(net.nodes))
        if len(net.nodes) > 200:
            bad.append((seed, "too large"))
            continue
        bad += [(seed, m) for m in view_mismatches(net, cdn, store)]
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60
    record(6, ok, f"500 networks (max {biggest} nodes), {len(bad)} mismatches {bad[:3]}, {elapsed:.1f}s")


def test_criterion_7_shuffled_roots(tmp_path):
    differing = []
    for seed in range(100):
        fx, rng = random_fixture(seed, max_packages=30, max_versions=4, callgraphs=True)
        t = random_time(fx, rng)
        net, cdn = build_snapshot(fx.index, t, fx.store())
        a, b = str(tmp_path / f"{seed}a"), str(tmp_path / f"{seed}b")
        write_snapshot(net, cdn, a)
        order = list(net.trees)
        random.Random(seed).shuffle(order)
        write_snapshot(net, build_cdn(fx.index, t, fx.store(), network=net, roots=order), b)
        if _files(a) != _files(b):
            differing.append(seed)
    record(7, not differing, f"100 fixtures, {len(differing)} with differing bytes {differing[:5]}")


def _two_version_bloat():
    idx, store = two_version_fixture()
    tree = resolve_tree(mirror_at(idx, ts(5)), idx.get("R", V("1.0.0")), ts(5))
    return coexistence_bloat(tree, store).percent


def test_criterion_8_invariants():
    failures = []
    # call-based counts never exceed metadata counts
    for seed in range(40):
        fx, rng = random_fixture(seed, max_packages=40, max_versions=5, callgraphs=True)
        t = random_time(fx, rng)
        net, cdn = build_snapshot(fx.index, t, fx.store())
        meta, call = MetadataView(net), CallView(net, cdn)
        for p in call.packages:
            if any(c > m for c, m in zip(dependency_counts(call, p), dependency_counts(meta, p))):
                failures.append(f"deps {seed}/{p}")
        for p in {n for n, _ in net.nodes}:
            if any(c > m for c, m in zip(dependent_counts(call, p), dependent_counts(meta, p))):
                failures.append(f"dependents {seed}/{p}")
            if reach(call, p) > reach(meta, p):
                failures.append(f"reach {seed}/{p}")
    # bloat on single-version trees and the forced two-version tree
    for seed in range(20):
        fx, rng = random_fixture(seed, max_packages=25, max_versions=4, callgraphs=True)
        net, _ = build_snapshot(fx.index, random_time(fx, rng), fx.store())
        store = fx.store()
        for name, tree in net.trees.items():
            pkgs = [n for n, _ in tree.nodes]
            if len(pkgs) == len(set(pkgs)) and coexistence_bloat(tree, store).percent != 0.0:
                failures.append(f"bloat {seed}/{name}")
    idx = dup_index("0.4.4")
    single = coexistence_bloat(
        resolve_tree(mirror_at(idx, ts(10)), idx.get("App", V("1.0.0")), ts(10)), store_of(idx, dup_graphs())
    ).percent
    forced = _two_version_bloat()
    if single != 0.0 or forced != 100.0:
        failures.append(f"bloat fixtures {single}/{forced}")
    # changed_fraction monotone in window length on yank-free fixtures
    windows = [timedelta(days=d) for d in (1, 7, 30, 90, 365)]
    for seed in range(30):
        fx, rng = random_fixture(seed, max_packages=30, max_versions=6, yank_prob=0.0, dynamic_prob=1.0)
        lo, hi = fx.index.min_timestamp, fx.index.max_timestamp
        fr = changed_fraction(fx.index, lo + (hi - lo) * rng.uniform(0.2, 0.6), windows)
        if fr != sorted(fr):
            failures.append(f"changed_fraction {seed}: {fr}")
    # spearman on identical / reversed rankings
    rng = random.Random(0)
    worst = 0.0
    for _ in range(200):
        xs = [rng.uniform(-1e3, 1e3) for _ in range(rng.randint(2, 60))]
        worst = max(worst, abs(spearman(xs, xs) - 1.0), abs(spearman(xs, [-x for x in xs]) + 1.0))
    if not worst <= 1e-12:
        failures.append(f"spearman error {worst}")
    record(8, not failures, f"{len(failures)} violations {failures[:3]}; bloat {single}%/{forced}%, spearman max err {worst:.1e}")


SCALE = SynthSpec(
    packages=500,
    versions=(5, 5),
    fanout=(1, 6),
    functions=(180, 220),
    seed=1,
    dynamic_prob=1.0,
    req_forms=(30, 50, 0, 8, 6, 3),
)


def test_criterion_9_scale(tmp_path):
    proc = psutil.Process()
    start = time.perf_counter()
    fx = generate(SCALE)
    paths = fx.write(str(tmp_path / "fx"))
    del fx
    idx = load_index(paths["index"], paths["timestamps"])
    lo, hi = idx.min_timestamp, idx.max_timestamp
    at = []
    for frac in (0.5, 0.8, 1.0):
        at += ["--at", (lo + (hi - lo) * frac).isoformat()]
    common = ["--index", paths["index"], "--timestamps", paths["timestamps"]]
    out = str(tmp_path / "out")
    codes = [
        main(["validate", *common, "--out", str(tmp_path / "validate.tsv")]),
        main(["build", *common, "--cg-store", paths["cg_store"], *at, "--out", out]),
        main(["analyze", *common, "--cg-store", paths["cg_store"], "--out", out]),
    ]
    elapsed = time.perf_counter() - start
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    snaps = sorted(os.listdir(out))
    ok = codes == [0, 0, 0] and len(snaps) == 3 and elapsed < 300 and peak_mb < 4096
    releases = len(idx)
    record(
        9,
        ok,
        f"{releases} releases, exit codes {codes}, {len(snaps)} snapshots, {elapsed:.0f}s, "
        f"peak RSS {peak_mb:.0f} MB (now {proc.memory_info().rss / 2**20:.0f} MB)",
    )
