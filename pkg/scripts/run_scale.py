"""Desk-scale smoke run: generate a synthetic registry, write it to disk and
drive validate -> build (3 snapshots) -> analyze through the CLI, timing
each phase and reporting peak memory."""

import argparse
import os
import resource
import tempfile
import time

from cdnet.cli import main
from cdnet.index import load_index
from cdnet.synth import SynthSpec, generate


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--packages", type=int, default=500)
    ap.add_argument("--versions", type=int, default=5)
    ap.add_argument("--functions", type=int, default=200, help="mean functions per package")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workdir", help="keep outputs here instead of a temp dir")
    return ap.parse_args()


def phase(name, fn):
    start = time.perf_counter()
    result = fn()
    print(f"{name:<10} {time.perf_counter() - start:7.1f}s  -> {result}")
    return result


def run(workdir: str, args) -> None:
    spec = SynthSpec(
        packages=args.packages,
        versions=(args.versions, args.versions),
        fanout=(1, 6),
        functions=(int(args.functions * 0.9), int(args.functions * 1.1)),
        seed=args.seed,
        dynamic_prob=1.0,
        req_forms=(30, 50, 0, 8, 6, 3),
    )
    paths = phase("generate", lambda: generate(spec).write(os.path.join(workdir, "fixture")))
    idx = load_index(paths["index"], paths["timestamps"])
    lo, hi = idx.min_timestamp, idx.max_timestamp
    at = []
    for frac in (0.5, 0.8, 1.0):
        at += ["--at", (lo + (hi - lo) * frac).isoformat()]
    common = ["--index", paths["index"], "--timestamps", paths["timestamps"]]
    out = os.path.join(workdir, "out")
    t0 = time.perf_counter()
    phase("validate", lambda: main(["validate", *common, "--out", os.path.join(workdir, "validate.tsv")]))
    phase("build", lambda: main(["build", *common, "--cg-store", paths["cg_store"], *at, "--out", out]))
    phase("analyze", lambda: main(["analyze", *common, "--cg-store", paths["cg_store"], "--out", out]))
    print(f"pipeline   {time.perf_counter() - t0:7.1f}s")
    print(f"peak RSS   {resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024:7.0f} MB")


if __name__ == "__main__":
    args = parse_args()
    if args.workdir:
        os.makedirs(args.workdir, exist_ok=True)
        run(args.workdir, args)
    else:
        with tempfile.TemporaryDirectory() as d:
            run(d, args)
