"""Seeded synthetic registries with call graphs, plus brute-force oracles.

Package ``i`` only depends on packages with a lower index and publishes its
first release after all of them, so every requirement is satisfiable at the
time it was written. Each package keeps a stable set of ``api_*`` functions
across versions; cross-package calls only target those, so any version a
resolver picks provides the callee.
"""

from __future__ import annotations

import io
import json
import os
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterable, Mapping, Optional

import numpy as np

from .callgraph import CallGraphStore, RawCallGraph, callgraph_to_dict, dump_callgraph, parse_callgraph
from .index import Index, Release, dump_index, dump_timestamps, index_from_text, runtime_deps
from .resolver import Node, ResolvedTree, UnresolvableError
from .semver import Version, compat_class, matches, parse_version

__all__ = [
    "SynthSpec",
    "SynthError",
    "Fixture",
    "generate",
    "oracle_closure",
    "matrix_closure",
    "oracle_resolve",
    "oracle_max_nodes",
]

EPOCH = datetime(2015, 1, 1, tzinfo=timezone.utc)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    packages: int = 20
    versions: tuple[int, int] = (1, 4)
    fanout: tuple[int, int] = (0, 3)
    dynamic_prob: float = 0.97  # share of requirements that are ranges rather than =x.y.z
    # weights over REQ_FORMS; caret forms dominate real manifests
    req_forms: tuple[float, ...] = (30, 50, 3, 8, 6, 3)
    functions: tuple[int, int] = (4, 10)
    edge_density: float = 1.0  # mean local calls per function
    inter_prob: float = 0.4  # chance a function calls into a dependency
    dispatch_mix: tuple[float, float, float] = (0.8, 0.1, 0.1)  # static, dynamic, macro
    interface_prob: float = 0.3
    impl_prob: float = 0.5
    optional_prob: float = 0.1
    dev_prob: float = 0.1
    std_prob: float = 0.1
    extern_prob: float = 0.02
    yank_prob: float = 0.0
    callgraphs: bool = True
    seed: int = 0
    start: datetime = EPOCH
    days: int = 1500

    def check(self) -> None:
        probs = {
            "dynamic_prob": self.dynamic_prob,
            "inter_prob": self.inter_prob,
            "interface_prob": self.interface_prob,
            "impl_prob": self.impl_prob,
            "optional_prob": self.optional_prob,
            "dev_prob": self.dev_prob,
            "std_prob": self.std_prob,
            "extern_prob": self.extern_prob,
            "yank_prob": self.yank_prob,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise SynthError(f"{name}={p} is not a probability")
        if len(self.req_forms) != len(REQ_FORMS) or any(w < 0 for w in self.req_forms) or sum(self.req_forms) <= 0:
            raise SynthError(f"req_forms needs {len(REQ_FORMS)} non-negative weights with a positive sum")
        if len(self.dispatch_mix) != 3 or any(w < 0 for w in self.dispatch_mix) or sum(self.dispatch_mix) <= 0:
            raise SynthError("dispatch_mix needs three non-negative weights with a positive sum")
        for name, (lo, hi) in (("versions", self.versions), ("fanout", self.fanout), ("functions", self.functions)):
            if lo < 0 or lo > hi:
                raise SynthError(f"{name} range {lo}..{hi} is empty or negative")
        if self.versions[0] < 1:
            raise SynthError("every package needs at least one version")
        if self.functions[0] < 1:
            raise SynthError("every release needs at least one function")
        if self.packages < 0:
            raise SynthError("negative package count")
        if self.packages and self.fanout[1] > self.packages:
            raise SynthError(f"fan-out {self.fanout[1]} exceeds the package count {self.packages}")
        if self.edge_density < 0:
            raise SynthError("edge_density must be non-negative")


@dataclass
class Fixture:
    spec: SynthSpec
    index: Index
    callgraphs: dict[tuple[str, Version], RawCallGraph] = field(default_factory=dict)

    def store(self) -> CallGraphStore:
        return CallGraphStore(self.index, self.callgraphs)

    def index_text(self) -> str:
        buf = io.StringIO()
        dump_index(self.index, buf)
        return buf.getvalue()

    def timestamps_text(self) -> str:
        buf = io.StringIO()
        dump_timestamps(self.index, buf)
        return buf.getvalue()

    def write(self, root: str) -> dict[str, str]:
        """Write ``index.jsonl``, ``timestamps.csv`` and ``callgraphs/``."""
        os.makedirs(root, exist_ok=True)
        paths = {
            "index": os.path.join(root, "index.jsonl"),
            "timestamps": os.path.join(root, "timestamps.csv"),
            "cg_store": os.path.join(root, "callgraphs"),
        }
        with open(paths["index"], "w", encoding="utf-8") as fh:
            fh.write(self.index_text())
        with open(paths["timestamps"], "w", encoding="utf-8") as fh:
            fh.write(self.timestamps_text())
        for (name, version), raw in sorted(self.callgraphs.items()):
            d = os.path.join(paths["cg_store"], name)
            os.makedirs(d, exist_ok=True)
            with open(os.path.join(d, f"{version}.json"), "w", encoding="utf-8") as fh:
                dump_callgraph(raw, fh)
        os.makedirs(paths["cg_store"], exist_ok=True)
        return paths

    def fingerprint(self) -> str:
        """Text form of the whole fixture, for determinism checks."""
        parts = [self.index_text(), self.timestamps_text()]
        for key in sorted(self.callgraphs):
            parts.append(json.dumps(callgraph_to_dict(self.callgraphs[key]), sort_keys=True))
        return "\n".join(parts)


def _bump(rng: random.Random, v: Version) -> Version:
    r = rng.random()
    if r < 0.5:
        return Version(v.major, v.minor, v.patch + 1)
    if r < 0.85:
        return Version(v.major, v.minor + 1, 0)
    return Version(v.major + 1, 0, 0)


REQ_FORMS = ("caret", "bare", "tilde", "wild", "range", "ge")


def _requirement(rng: random.Random, v: Version, spec: "SynthSpec") -> str:
    if rng.random() >= spec.dynamic_prob:
        return f"={v}"
    form = rng.choices(REQ_FORMS, spec.req_forms)[0]
    if form == "caret":
        return f"^{v}"
    if form == "bare":
        return str(v)
    if form == "tilde":
        return f"~{v}"
    if form == "wild":
        return f"{v.major}.*" if v.major > 0 else f"0.{v.minor}.*"
    if form == "range":
        return f">={v}, <{v.major + 1}.0.0"
    return f">={v}"


class _Pkg:
    def __init__(self, name: str):
        self.name = name
        self.releases: list[tuple[Version, datetime, bool]] = []
        self.api: list[tuple[str, bool]] = []  # (path, takes own type)
        self.has_iface = False


def _ref(pkg: Optional[str], path: str) -> dict:
    return {"package": pkg, "path": path}


def _callgraph(
    rng: random.Random,
    spec: SynthSpec,
    idx: int,
    pkg: _Pkg,
    version: Version,
    k: int,
    deps: list[dict],
    pkgs: Mapping[str, _Pkg],
) -> dict:
    name = pkg.name
    funcs: list[dict] = []
    edges: list[dict] = []
    ids: dict[tuple, int] = {}

    def fn(package, path, args=(), visibility="public") -> int:
        key = (package, path)
        if key not in ids:
            ids[key] = len(funcs)
            funcs.append(
                {"id": len(funcs), "package": package, "version": None, "path": path,
                 "visibility": visibility, "args": list(args), "ret": None}
            )
        return ids[key]

    local = []
    for path, typed in pkg.api:
        local.append(fn(name, path, [_ref(name, "Ty")] if typed else []))
    n_total = rng.randint(*spec.functions)
    for x in range(max(0, n_total - len(local))):
        local.append(fn(name, f"v{k}_f{x}", visibility="public" if rng.random() < 0.5 else "private"))

    interfaces, impls = [], []
    self_arg = [_ref(None, "Self")]
    if pkg.has_iface:
        interfaces.append({"path": "Tr", "methods": [{"name": "call", "args": self_arg, "ret": None}]})
        decl = fn(name, "Tr::call", self_arg)
        impl = fn(name, "Ty::call", [_ref(name, "Ty")])
        impls.append({"interface": _ref(name, "Tr"), "type": _ref(name, "Ty"), "method": "call", "function": impl})
        local.extend([decl, impl])

    def edge(a, b, d):
        edges.append({"caller": a, "callee": b, "dispatch": d})

    # local calls
    hi = int(round(2 * spec.edge_density))
    for a in local:
        for _ in range(rng.randint(0, hi) if hi else 0):
            b = rng.choice(local)
            d = "macro" if rng.random() < spec.dispatch_mix[2] / sum(spec.dispatch_mix) else "static"
            edge(a, b, d)
    if idx == 0 and spec.edge_density > 0 and pkg.has_iface:
        # one call of each dispatch kind
        edge(local[0], ids[(name, "Tr::call")], "dynamic")
        edge(local[0], ids[(name, "Ty::call")], "macro")
        edge(local[0], ids[(name, "Ty::call")], "static")

    callable_deps = [d for d in deps if d["kind"] == "normal"]
    w_static, w_dyn, w_macro = spec.dispatch_mix
    for dep in callable_deps:
        tgt = pkgs[dep["name"]]
        if tgt.has_iface and rng.random() < spec.impl_prob:
            f = fn(name, f"Ty_as_{tgt.name}_Tr::call", [_ref(name, "Ty")])
            impls.append({"interface": _ref(tgt.name, "Tr"), "type": _ref(name, "Ty"), "method": "call", "function": f})
    if callable_deps:
        for a in local:
            if rng.random() >= spec.inter_prob:
                continue
            for _ in range(rng.randint(1, 2)):
                tgt = pkgs[rng.choice(callable_deps)["name"]]
                r = rng.random() * (w_static + w_dyn + w_macro)
                if r < w_dyn and tgt.has_iface:
                    edge(a, fn(tgt.name, "Tr::call", self_arg), "dynamic")
                else:
                    path, typed = rng.choice(tgt.api)
                    b = fn(tgt.name, path, [_ref(tgt.name, "Ty")] if typed else [])
                    edge(a, b, "macro" if r >= w_static + w_dyn else "static")
    for a in local:
        if rng.random() < spec.std_prob:
            edge(a, fn("std", "fmt::format"), "static")
        if rng.random() < spec.extern_prob:
            edge(a, fn("extern", "pipe"), "static")
    return {
        "package": name,
        "version": str(version),
        "functions": funcs,
        "edges": edges,
        "type_hierarchy": {"interfaces": interfaces, "impls": impls},
    }


def generate(spec: SynthSpec) -> Fixture:
    """Build the fixture ``spec`` describes; equal specs give equal fixtures."""
    spec.check()
    rng = random.Random(spec.seed)
    n = spec.packages
    width = max(3, len(str(max(n - 1, 0))))
    slot = spec.days / (n + 1) if n else 1.0
    pkgs: dict[str, _Pkg] = {}
    names = [f"p{i:0{width}d}" for i in range(n)]
    records: list[dict] = []
    stamp_rows: list[tuple[str, str, str]] = []
    raw_docs: list[dict] = []

    for i, name in enumerate(names):
        pkg = _Pkg(name)
        pkgs[name] = pkg
        pkg.has_iface = i == 0 or rng.random() < spec.interface_prob
        n_api = rng.randint(max(1, spec.functions[0] // 2), max(1, spec.functions[1] // 2))
        pkg.api = [(f"api_{a}", rng.random() < 0.3) for a in range(n_api)]
        # releases
        count = rng.randint(*spec.versions)
        v = Version(0, 1, 0) if rng.random() < 0.4 else Version(1, 0, 0)
        t = spec.start + timedelta(days=(i + 1) * slot, seconds=rng.randint(0, 3600))
        t = t.replace(microsecond=0)
        for k in range(count):
            yanked = k > 0 and rng.random() < spec.yank_prob
            pkg.releases.append((v, t, yanked))
            v = _bump(rng, v)
            t = t + timedelta(days=rng.uniform(1, max(2.0, slot * 2)))
            t = t.replace(microsecond=0)
        # dependency targets, stable across versions
        lo, hi = spec.fanout
        fan = min(rng.randint(lo, hi), i)
        targets = sorted(rng.sample(range(i), fan)) if fan else []
        shapes = []
        for j in targets:
            r = rng.random()
            kind = "dev" if r < spec.dev_prob else "normal"
            optional = kind == "normal" and rng.random() < spec.optional_prob
            shapes.append((names[j], kind, optional, optional and rng.random() < 0.5))
        for k, (version, created, yanked) in enumerate(pkg.releases):
            deps = []
            features: dict[str, list[str]] = {"default": []}
            for dep_name, kind, optional, on_by_default in shapes:
                usable = [rv for rv, rt, ry in pkgs[dep_name].releases if rt <= created and not ry]
                # lean towards recent releases
                pick = usable[-1] if rng.random() < 0.6 else rng.choice(usable)
                deps.append(
                    {"name": dep_name, "req": _requirement(rng, pick, spec), "kind": kind,
                     "optional": optional, "features": [], "default_features": True, "target": None}
                )
                if optional:
                    features[f"with_{dep_name}"] = [f"dep:{dep_name}"]
                    if on_by_default:
                        features["default"].append(f"with_{dep_name}")
            records.append({"name": name, "vers": str(version), "deps": deps, "features": features, "yanked": yanked})
            stamp_rows.append((name, str(version), created.isoformat().replace("+00:00", "Z")))
            if spec.callgraphs:
                raw_docs.append(_callgraph(rng, spec, i, pkg, version, k, deps, pkgs))

    index_text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    stamp_text = "".join(f"{a},{b},{c}\n" for a, b, c in stamp_rows)
    index = index_from_text(index_text, stamp_text)
    callgraphs = {}
    for doc in raw_docs:
        callgraphs[(doc["package"], parse_version(doc["version"]))] = parse_callgraph(doc)
    return Fixture(spec, index, callgraphs)


# --- oracles ----------------------------------------------------------------------


def oracle_max_nodes(default: int = 2000) -> int:
    """Size bound for brute-force oracles (``CDNET_ORACLE_MAX_NODES``)."""
    try:
        return int(os.environ.get("CDNET_ORACLE_MAX_NODES", default))
    except ValueError:
        return default


def _check_size(graph: Mapping) -> None:
    limit = oracle_max_nodes()
    if len(graph) > limit:
        raise SynthError(f"oracle graph has {len(graph)} nodes, bound is {limit}")


def oracle_closure(graph: Mapping, node) -> set:
    """Nodes reachable from ``node`` by one or more edges, found by plain
    depth-first search. ``node`` itself is excluded even on a cycle."""
    _check_size(graph)
    seen = set()
    stack = [node]
    while stack:
        n = stack.pop()
        for m in graph.get(n, ()):
            if m not in seen:
                seen.add(m)
                stack.append(m)
    seen.discard(node)
    return seen


def matrix_closure(graph: Mapping, node) -> set:
    """Same answer as :func:`oracle_closure` via repeated boolean squaring of
    the adjacency matrix."""
    _check_size(graph)
    nodes = sorted(set(graph) | {m for vs in graph.values() for m in vs} | {node}, key=repr)
    pos = {n: i for i, n in enumerate(nodes)}
    a = np.zeros((len(nodes), len(nodes)), dtype=bool)
    for n, vs in graph.items():
        for m in vs:
            a[pos[n], pos[m]] = True
    reach = a.copy()
    while True:
        nxt = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
        if (nxt == reach).all():
            break
        reach = nxt
    row = reach[pos[node]]
    return {nodes[i] for i in np.flatnonzero(row) if nodes[i] != node}


def _package_order(index: Index) -> list[str]:
    """Packages ordered so that every dependant precedes its dependencies."""
    deps: dict[str, set] = {name: set() for name in index.packages}
    for r in index:
        for d in r.deps:
            if d.name in deps:
                deps[r.name].add(d.name)
    order: list[str] = []
    state: dict[str, int] = {}

    def visit(p):
        # post-order over dependencies, then reversed
        st = state.get(p)
        if st == 1:
            raise SynthError(f"package graph has a cycle through {p}; oracle needs a DAG")
        if st == 2:
            return
        state[p] = 1
        for q in sorted(deps[p]):
            visit(q)
        state[p] = 2
        order.append(p)

    for p in sorted(deps):
        visit(p)
    return order[::-1]


def oracle_resolve(
    index: Index,
    release: Release,
    t: Optional[datetime] = None,
    enabled_features: Optional[Iterable[str]] = None,
    exclude: frozenset = frozenset(),
) -> ResolvedTree:
    """Single topological pass over an acyclic package graph. When a package
    comes up, all of its possible dependants are settled; its requirements
    are split by compat class and each class gets the highest eligible
    version satisfying every requirement, found by trying all of them."""

    def eligible(name):
        return [
            r.version for r in index.releases_of(name)
            if not r.yanked and r.key not in exclude and (t is None or r.created_at <= t)
        ]

    root = release.key
    feats: dict[Node, frozenset] = {
        root: frozenset(release.default_features if enabled_features is None else enabled_features)
    }
    reached = {root}
    specs_of: dict[Node, list] = {}

    def deps_of(node):
        if node not in specs_of:
            specs_of[node] = runtime_deps(index.get(*node), feats[node])
        return specs_of[node]

    for pkg in _package_order(index):
        if pkg == root[0]:
            continue
        incoming = [(n, s) for n in reached for s in deps_of(n) if s.name == pkg]
        if not incoming:
            continue
        cands = eligible(pkg)
        groups: dict[tuple, list] = {}
        for n, s in incoming:
            ok = [v for v in cands if matches(s.constraint, v)]
            if not ok:
                raise UnresolvableError(pkg, s.req, (root, n))
            groups.setdefault(compat_class(max(ok)), []).append((n, s))
        for cls, reqs in groups.items():
            fits = [v for v in cands if compat_class(v) == cls and all(matches(s.constraint, v) for _, s in reqs)]
            if not fits:
                raise UnresolvableError(pkg, ", ".join(sorted({s.req for _, s in reqs})), (root,), "conflicting requirements")
            node = (pkg, max(fits))
            rel = index.get(*node)
            known = rel.known_features
            on = set()
            for _, s in reqs:
                if s.default_features:
                    on.update(rel.default_features)
                on.update(s.features)
            feats[node] = frozenset(f for f in on if f in known)
            reached.add(node)

    children: dict[Node, list] = {}
    for n in reached:
        for s in deps_of(n):
            ok = [v for v in eligible(s.name) if matches(s.constraint, v)]
            cls = compat_class(max(ok))
            chosen = [m for m in reached if m[0] == s.name and compat_class(m[1]) == cls]
            children.setdefault(n, []).append((chosen[0], s))
    return ResolvedTree(
        root,
        frozenset(reached),
        {k: tuple(v) for k, v in children.items()},
        {n: feats[n] for n in reached},
    )
