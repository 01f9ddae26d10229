"""Seeded comparisons of the production code against the brute-force oracles.

  resolver : resolve_tree vs. exhaustive enumeration on random indices
  views    : dependency / dependent counts and reach vs. closure oracles
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from cdnet.index import mirror_at  # noqa: E402
from cdnet.resolver import UnresolvableError, resolve_tree  # noqa: E402
from cdnet.synth import oracle_resolve  # noqa: E402
from cdnet.unify import build_snapshot  # noqa: E402

from oracles import view_mismatches  # noqa: E402
from scenarios import random_fixture, random_time  # noqa: E402


def resolver_trials(n: int, max_packages: int, max_versions: int) -> list[int]:
    bad = []
    for seed in range(n):
        fx, rng = random_fixture(seed, max_packages=max_packages, max_versions=max_versions)
        t = random_time(fx, rng)
        m = mirror_at(fx.index, t)
        rel = rng.choice(list(m))
        out = []
        for fn in (lambda: resolve_tree(m, rel, t), lambda: oracle_resolve(fx.index, rel, t)):
            try:
                out.append(fn())
            except UnresolvableError:
                out.append(None)
        if out[0] != out[1]:
            bad.append(seed)
    return bad


def view_trials(n: int, max_packages: int, max_versions: int) -> list[tuple]:
    bad = []
    for seed in range(n):
        fx, rng = random_fixture(seed, max_packages=max_packages, max_versions=max_versions, callgraphs=True)
        store = fx.store()
        net, cdn = build_snapshot(fx.index, random_time(fx, rng), store)
        bad += [(seed, m) for m in view_mismatches(net, cdn, store)]
    return bad


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("suite", choices=("resolver", "views"))
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--max-packages", type=int, default=50)
    ap.add_argument("--max-versions", type=int, default=10)
    args = ap.parse_args()
    run = resolver_trials if args.suite == "resolver" else view_trials
    start = time.perf_counter()
    bad = run(args.trials, args.max_packages, args.max_versions)
    print(f"{args.suite}: {args.trials} trials, {len(bad)} mismatches, {time.perf_counter() - start:.1f}s")
    for b in bad[:20]:
        print("  ", b)
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
