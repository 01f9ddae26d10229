"""Command line: ``cdnet validate|build|analyze|diff``.

Exit codes: 0 success, 2 usage or bad configuration, 3 unparsable input,
4 validation violations under ``--strict``, 5 unresolvable input (a diff
root that cannot be resolved, or any skipped root under ``build --strict``).
Logs go to stderr, data only to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional, Sequence

from .callgraph import CallGraphParseError, CallGraphStore, MissingCallGraphError
from .index import (
    DuplicateReleaseError,
    Index,
    IndexParseError,
    MissingTimestampError,
    load_index,
    mirror_at,
    parse_timestamp,
    runtime_deps,
    validate,
)
from .metrics import (
    CallView,
    MetadataView,
    call_summary,
    coexistence_bloat,
    compare_networks,
    degree_distribution,
    dependency_counts,
    dependent_counts,
    function_reach_all,
    reach,
)
from .resolver import (
    UnresolvableError,
    changed_fraction,
    package_network,
    resolve_tree,
    root_features,
    snapshot_roots,
    tree_changed,
)
from .semver import SemverError, parse_version
from .serialize import atomic_write, read_snapshot, snapshot_dirname, write_snapshot
from .unify import build_cdn

log = logging.getLogger("cdnet")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INVALID = 4
EXIT_UNRESOLVABLE = 5

METRICS = ("summary", "degrees", "dependencies", "dependents", "reach", "api_calls", "bloat", "function_reach", "compare")


class ConfigError(ValueError):
    pass


class UnresolvableInput(RuntimeError):
    pass


_DURATION = re.compile(r"^(\d+(?:\.\d+)?)([smhdw])$")
_UNITS = {"s": "seconds", "m": "minutes", "h": "hours", "d": "days", "w": "weeks"}


def parse_duration(text: str) -> timedelta:
    m = _DURATION.match(text.strip())
    if not m:
        raise ConfigError(f"bad duration {text!r} (use e.g. 30d, 1w, 12h)")
    return timedelta(**{_UNITS[m.group(2)]: float(m.group(1))})


@dataclass
class RunConfig:
    index: Optional[str] = None
    timestamps: Optional[str] = None
    cg_store: Optional[str] = None
    times: list[datetime] = field(default_factory=list)
    out: Optional[str] = None
    metrics: tuple[str, ...] = METRICS
    features: str = "default"
    strict: bool = False
    build_ok: Optional[str] = None
    windows: tuple[timedelta, ...] = ()

    def check(self, need: Sequence[str] = ()) -> None:
        for name in need:
            if getattr(self, name) in (None, [], ()):
                raise ConfigError(f"--{name.replace('_', '-')} is required")
        for name in ("index", "timestamps", "cg_store", "build_ok"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"--{name.replace('_', '-')}: {path} does not exist")
        for a, b in zip(self.times, self.times[1:]):
            if not a < b:
                raise ConfigError("snapshot timestamps must be strictly increasing")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ConfigError(f"unknown metric(s): {', '.join(sorted(bad))}")
        if self.features not in ("default", "all", "none"):
            raise ConfigError(f"unknown feature policy {self.features!r}")

    def load(self) -> Index:
        return load_index(self.index, self.timestamps)

    def excluded(self, index: Index) -> frozenset:
        """Releases kept out of snapshots: validation failures, and releases
        missing from the optional build-verified list."""
        flagged = set(validate(index).flagged)
        if self.build_ok:
            ok = set()
            with open(self.build_ok, encoding="utf-8", newline="") as fh:
                for row in csv.reader(fh):
                    if len(row) >= 2 and not row[0].startswith("#"):
                        try:
                            ok.add((row[0].strip(), parse_version(row[1])))
                        except SemverError:
                            continue  # header or junk row
            flagged.update(r.key for r in index if r.key not in ok)
        return frozenset(flagged)


def _write_tsv(path: str, header: Sequence[str], rows) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_json(path: str, doc) -> None:
    with atomic_write(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# --- commands ---------------------------------------------------------------------


def cmd_validate(cfg: RunConfig) -> int:
    cfg.check(("index", "timestamps"))
    index = cfg.load()
    report = validate(index)
    rows = report.rows()
    if cfg.out:
        _write_tsv(cfg.out, ("name", "version", "problem", "dependency", "requirement"), rows)
    log.info("%d releases checked, %d flagged", len(index), len(report.flagged))
    if report and cfg.strict:
        return EXIT_INVALID
    return EXIT_OK


def cmd_build(cfg: RunConfig) -> int:
    cfg.check(("index", "timestamps", "cg_store", "times", "out"))
    index = cfg.load()
    exclude = cfg.excluded(index)
    store = CallGraphStore(index, cfg.cg_store)
    any_skipped = False
    for t in cfg.times:
        network = package_network(index, t, "latest", cfg.features, exclude)
        cdn = build_cdn(index, t, store, network=network)
        outdir = os.path.join(cfg.out, snapshot_dirname(t))
        write_snapshot(network, cdn, outdir, {"feature_policy": cfg.features})
        log.info(
            "%s: %d roots, %d skipped, CDN %d nodes / %d edges",
            t.isoformat(), len(cdn.footprints), len(cdn.skipped), len(cdn.nodes), len(cdn.edges),
        )
        any_skipped = any_skipped or bool(cdn.skipped)
    if cfg.strict and any_skipped:
        return EXIT_UNRESOLVABLE
    return EXIT_OK


def snapshot_dirs(out: str) -> list[str]:
    if os.path.exists(os.path.join(out, "manifest.json")):
        return [out]
    return sorted(
        os.path.join(out, d) for d in os.listdir(out) if os.path.exists(os.path.join(out, d, "manifest.json"))
    )


def analyze_snapshot(snapdir: str, metrics: Sequence[str], store: Optional[CallGraphStore] = None) -> dict:
    """Compute ``metrics`` for one built snapshot and write ``reports/``.
    Returns the summary document."""
    network, cdn, manifest = read_snapshot(snapdir)
    rdir = os.path.join(snapdir, "reports")
    meta, call = MetadataView(network), CallView(network, cdn)
    known = sorted(set(network.roots) | set(network.skipped) | {n for n, _ in network.nodes})
    summary: dict = {"time": manifest.get("time")}

    if "summary" in metrics:
        cs = call_summary(cdn)
        rows = [("functions", vis, "", n) for vis, n in sorted(cs.functions.items())]
        rows += [("edges", "intra", d, n) for d, n in cs.intra.items()]
        rows += [("edges", "inter", d, n) for d, n in cs.inter.items()]
        _write_tsv(os.path.join(rdir, "summary.tsv"), ("kind", "group", "dispatch", "count"), rows)
        summary["summary"] = cs.as_dict()
    if "degrees" in metrics:
        rows, stats = [], {}
        for direction in ("in", "out"):
            for dispatch in ("all", "static", "dynamic", "macro"):
                for scope in ("all", "inter"):
                    h = degree_distribution(cdn, direction, dispatch, scope)
                    rows += [(direction, dispatch, scope, d, c) for d, c in h.rows()]
                    stats[f"{direction}/{dispatch}/{scope}"] = h.stats
        _write_tsv(os.path.join(rdir, "degrees.tsv"), ("direction", "dispatch", "scope", "degree", "count"), rows)
        summary["degrees"] = stats
    if "dependencies" in metrics:
        rows = []
        for view in (meta, call):
            for p in view.packages:
                d, t = dependency_counts(view, p)
                rows.append((p, view.name, d, t))
        _write_tsv(os.path.join(rdir, "dependencies.tsv"), ("package", "view", "direct", "transitive"), rows)
    if "dependents" in metrics:
        rows = []
        for view in (meta, call):
            for p in known:
                d, t = dependent_counts(view, p)
                rows.append((p, view.name, d, t))
        _write_tsv(os.path.join(rdir, "dependents.tsv"), ("package", "view", "direct", "total"), rows)
    if "reach" in metrics:
        rows = [(p, _fmt(reach(meta, p)), _fmt(reach(call, p))) for p in known]
        _write_tsv(os.path.join(rdir, "reach.tsv"), ("package", "metadata", "call"), rows)
        summary["reach"] = {
            "metadata": max((float(r[1]) for r in rows), default=0.0),
            "call": max((float(r[2]) for r in rows), default=0.0),
        }
    if "api_calls" in metrics:
        rows = [(p, *call.api_calls(p)) for p in call.packages]
        _write_tsv(os.path.join(rdir, "api_calls.tsv"), ("package", "direct_calls", "transitive_calls"), rows)
    if "bloat" in metrics:
        if store is None:
            log.warning("bloat needs --index, --timestamps and --cg-store; skipped")
        else:
            rows, cache = [], {}
            for name, tree in network.trees.items():
                try:
                    b = coexistence_bloat(tree, store, cache)
                except MissingCallGraphError as exc:
                    log.info("bloat of %s skipped: %s", name, exc)
                    continue
                rows.append((name, str(tree.root[1]), _fmt(b.percent), b.coexisting, b.total, int(b.self_cycle)))
            _write_tsv(
                os.path.join(rdir, "bloat.tsv"), ("package", "version", "percent", "coexisting", "total", "self_cycle"), rows
            )
            summary["bloat"] = {"with_coexisting": sum(1 for r in rows if r[3] > 0), "roots": len(rows)}
    if "function_reach" in metrics:
        fr = function_reach_all(cdn, network.package_count)
        rows = [(n.key, n.package, str(n.version or ""), _fmt(v)) for n, v in sorted(fr.items())]
        _write_tsv(os.path.join(rdir, "function_reach.tsv"), ("function", "package", "version", "reach"), rows)
        summary["function_reach"] = {"max": max(fr.values(), default=0.0)}
    if "compare" in metrics:
        rows, rhos = [], {}
        for stat in ("direct", "transitive", "direct_dependents", "total_dependents"):
            try:
                c = compare_networks(meta, call, stat)
            except ValueError as exc:
                rhos[stat] = {"rho": None, "degenerate": True, "reason": str(exc), "n": 0}
                continue
            rows += [(stat, p, _fmt(x), _fmt(y)) for p, x, y in c.rows()]
            rhos[stat] = {"rho": c.rho, "degenerate": c.degenerate, "reason": c.reason, "n": len(c.packages)}
        _write_tsv(os.path.join(rdir, "compare.tsv"), ("statistic", "package", "metadata", "call"), rows)
        summary["compare"] = rhos
    _write_json(os.path.join(rdir, "summary.json"), summary)
    return summary


def cmd_analyze(cfg: RunConfig) -> int:
    cfg.check(("out",))
    store = None
    if cfg.index and cfg.timestamps and cfg.cg_store:
        store = CallGraphStore(cfg.load(), cfg.cg_store)
    dirs = snapshot_dirs(cfg.out)
    if not dirs:
        raise ConfigError(f"no built snapshots under {cfg.out}")
    for d in dirs:
        analyze_snapshot(d, cfg.metrics, store)
        log.info("analyzed %s", d)
    return EXIT_OK


def diff_rows(index: Index, t1: datetime, t2: datetime, exclude: frozenset, features: str = "default"):
    """Re-resolve every root of the ``t1`` snapshot at ``t2``."""
    m1, m2 = mirror_at(index, t1), mirror_at(index, t2)
    rows = []
    for name, rel in snapshot_roots(m1, exclude).items():
        feats = root_features(rel, features)
        if not runtime_deps(rel, feats):
            continue
        try:
            a = resolve_tree(m1, rel, t1, feats, exclude)
        except UnresolvableError as exc:
            raise UnresolvableInput(str(exc)) from exc
        try:
            b = resolve_tree(m2, rel, t2, feats, exclude)
        except UnresolvableError as exc:
            rows.append((name, str(rel.version), 1, f"unresolvable: {exc}"))
            continue
        changed, diff = tree_changed(a, b)
        detail = "; ".join(
            f"{p}: {'/'.join(map(str, old)) or '-'} -> {'/'.join(map(str, new)) or '-'}" for p, (old, new) in diff.items()
        )
        rows.append((name, str(rel.version), int(changed), detail))
    return sorted(rows)


def cmd_diff(cfg: RunConfig) -> int:
    cfg.check(("index", "timestamps", "out"))
    if len(cfg.times) != 2:
        raise ConfigError("diff needs exactly two --at timestamps")
    index = cfg.load()
    exclude = cfg.excluded(index)
    t1, t2 = cfg.times
    rows = diff_rows(index, t1, t2, exclude, cfg.features)
    os.makedirs(cfg.out, exist_ok=True)
    _write_tsv(os.path.join(cfg.out, "diff.tsv"), ("package", "version", "changed", "detail"), rows)
    doc = {"t1": t1.isoformat(), "t2": t2.isoformat(), "roots": len(rows), "changed": sum(r[2] for r in rows)}
    if cfg.windows:
        fr = changed_fraction(index, t1, list(cfg.windows), exclude)
        _write_tsv(
            os.path.join(cfg.out, "changed_fraction.tsv"),
            ("window_seconds", "fraction"),
            [(int(w.total_seconds()), _fmt(f)) for w, f in zip(cfg.windows, fr)],
        )
        doc["changed_fraction"] = fr
    _write_json(os.path.join(cfg.out, "diff.json"), doc)
    log.info("%d of %d roots changed between %s and %s", doc["changed"], doc["roots"], t1, t2)
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------


def _times(args) -> list[datetime]:
    times = [parse_timestamp(t) for t in (args.at or [])]
    if getattr(args, "start", None):
        if not (args.step and args.count):
            raise ConfigError("--start needs --step and --count")
        start, step = parse_timestamp(args.start), parse_duration(args.step)
        times += [start + i * step for i in range(args.count)]
    return times


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdnet", description="Call-based dependency networks from a registry index.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, store=False, times=False):
        sp.add_argument("--index")
        sp.add_argument("--timestamps")
        if store:
            sp.add_argument("--cg-store", dest="cg_store")
        if times:
            sp.add_argument("--at", action="append", help="ISO-8601 snapshot time (repeatable)")
        sp.add_argument("--out")
        sp.add_argument("--features", default="default", choices=("default", "all", "none"))
        sp.add_argument("--strict", action="store_true")
        sp.add_argument("--build-ok", dest="build_ok", help="CSV name,version of releases that built")

    v = sub.add_parser("validate", help="flag releases with unknown or unsatisfiable dependencies")
    common(v)
    b = sub.add_parser("build", help="resolve snapshots and write PDN/CDN files")
    common(b, store=True, times=True)
    b.add_argument("--start")
    b.add_argument("--step")
    b.add_argument("--count", type=int)
    a = sub.add_parser("analyze", help="compute metric reports for built snapshots")
    common(a, store=True)
    a.add_argument("--metrics", default=",".join(METRICS))
    d = sub.add_parser("diff", help="changed dependency trees between two times")
    common(d, times=True)
    d.add_argument("--windows", default="", help="comma list of durations for changed fractions")
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        index=args.index,
        timestamps=args.timestamps,
        cg_store=getattr(args, "cg_store", None),
        out=args.out,
        features=args.features,
        strict=args.strict,
        build_ok=args.build_ok,
    )
    if hasattr(args, "at"):
        cfg.times = _times(args)
    if getattr(args, "metrics", None):
        cfg.metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    if getattr(args, "windows", ""):
        cfg.windows = tuple(parse_duration(w) for w in args.windows.split(",") if w.strip())
    return cfg


COMMANDS = {"validate": cmd_validate, "build": cmd_build, "analyze": cmd_analyze, "diff": cmd_diff}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (IndexParseError, CallGraphParseError, DuplicateReleaseError, MissingTimestampError, SemverError) as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except UnresolvableInput as exc:
        log.error("unresolvable: %s", exc)
        return EXIT_UNRESOLVABLE
    except ValueError as exc:
        # timestamps that fail to parse end up here
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
