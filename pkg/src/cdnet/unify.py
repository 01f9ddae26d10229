"""Merging package call graphs into per-release unified graphs and the CDN."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from datetime import datetime
from typing import Iterable, Mapping, Optional, Sequence

from .callgraph import (
    UNRESOLVED,
    CallEdge,
    CallGraphStore,
    FunctionNode,
    Impl,
    Interface,
    MethodSig,
    PackageCallGraph,
    TypeRef,
)
from .index import Index
from .resolver import Node, PackageNetwork, ResolvedTree, package_network

__all__ = [
    "UnifiedGraph",
    "CDN",
    "IncompleteInputError",
    "unify_release",
    "link_dynamic",
    "merge_unified",
    "build_cdn",
    "build_snapshot",
    "CallFootprint",
    "call_footprint",
]

log = logging.getLogger(__name__)


class IncompleteInputError(LookupError):
    def __init__(self, missing: Sequence[Node]):
        self.missing = tuple(sorted(missing))
        names = ", ".join(f"{n} {v}" for n, v in self.missing)
        super().__init__(f"missing call graphs for: {names}")

    def __str__(self):
        return self.args[0]


class _Part:
    """One release's call graph with versions filled in for a given choice
    of child versions. Shared between every tree making that choice."""

    __slots__ = ("owner", "owned", "foreign", "edges", "succ", "loose", "dynamic", "interfaces", "impls", "dropped")

    def __init__(self, owner, nodes, edges, interfaces, impls, dropped):
        self.owner = owner
        self.owned = frozenset(n for n in nodes if n.release == owner)
        self.foreign = nodes - self.owned
        self.edges = edges
        succ: dict = {}
        loose = []
        for e in edges:
            if e.caller.release == owner:
                succ.setdefault(e.caller, []).append(e)
            else:
                loose.append(e)
        self.succ = succ
        # edges whose caller belongs to another release (rare)
        self.loose = tuple(loose)
        self.dynamic = tuple(e for e in edges if e.dispatch == "dynamic")
        self.interfaces = interfaces
        self.impls = impls
        self.dropped = dropped


def _union_nodes(parts) -> frozenset:
    # owned copies go in first so they win over foreign references
    return frozenset().union(*(p.owned for p in parts)).union(*(p.foreign for p in parts))


@dataclass(frozen=True, eq=False)
class UnifiedGraph:
    """The merged call graph of one root's resolved tree.

    Stored as the rewritten per-release parts plus the edges added by
    dynamic linking; ``nodes`` and ``edges`` are materialized on demand.
    """

    root: Node
    parts: tuple = ()
    added: frozenset = frozenset()

    @cached_property
    def nodes(self) -> frozenset:
        return _union_nodes(self.parts)

    @cached_property
    def edges(self) -> frozenset:
        return frozenset().union(*(p.edges for p in self.parts), self.added)

    @cached_property
    def provenance(self) -> dict:
        """Function -> releases whose call graph mentions it."""
        out: dict = {}
        for p in self.parts:
            for n in p.owned:
                out.setdefault(n, set()).add(p.owner)
            for n in p.foreign:
                out.setdefault(n, set()).add(p.owner)
        return {n: frozenset(v) for n, v in out.items()}

    @property
    def interfaces(self) -> tuple:
        return tuple(i for p in self.parts for i in p.interfaces)

    @property
    def impls(self) -> tuple:
        return tuple(i for p in self.parts for i in p.impls)

    @property
    def dropped(self) -> int:
        return sum(p.dropped for p in self.parts)

    @property
    def unresolved(self) -> frozenset:
        return frozenset(n for n in self.nodes if not n.is_resolved)

    def __eq__(self, other):
        if not isinstance(other, UnifiedGraph):
            return NotImplemented
        return self.root == other.root and self.nodes == other.nodes and self.edges == other.edges

    __hash__ = None


@dataclass(frozen=True)
class CDN:
    """Union of the unified graphs of every resolved root at one time.

    ``provenance`` maps each release to the roots whose tree contains it.
    """

    time: Optional[datetime]
    nodes: frozenset
    edges: frozenset
    provenance: Mapping[Node, frozenset] = field(default_factory=dict, compare=False)
    skipped: Mapping[str, str] = field(default_factory=dict, compare=False)
    footprints: Mapping[str, "CallFootprint"] = field(default_factory=dict, compare=False)

    @property
    def package_index(self) -> dict[tuple, frozenset]:
        out: dict[tuple, set] = {}
        for n in self.nodes:
            out.setdefault(n.release, set()).add(n)
        return {k: frozenset(v) for k, v in out.items()}

    def __len__(self):
        return len(self.nodes)


def _fill_ref(ref: Optional[TypeRef], versions: Mapping[str, object]):
    if ref is None or ref.is_resolved:
        return ref, True
    v = versions.get(ref.package)
    if v is None:
        return None, False
    return ref.with_version(v), True


def _fill_node(node: FunctionNode, versions: Mapping[str, object]) -> Optional[FunctionNode]:
    if node.is_resolved:
        return node
    version = node.version
    if version is UNRESOLVED:
        version = versions.get(node.package)
        if version is None:
            return None
    args = []
    for a in node.args:
        a2, ok = _fill_ref(a, versions)
        if not ok:
            return None
        args.append(a2)
    ret, ok = _fill_ref(node.ret, versions)
    if not ok:
        return None
    return FunctionNode(node.registry, node.package, version, node.path, tuple(args), ret, node.visibility)


def _unresolved_packages(graph: PackageCallGraph) -> frozenset:
    pkgs = set()
    for n in graph.nodes:
        if n.version is UNRESOLVED:
            pkgs.add(n.package)
        for t in (*n.args, n.ret):
            if t is not None and not t.is_resolved:
                pkgs.add(t.package)
    for it in graph.interfaces:
        if not it.ref.is_resolved:
            pkgs.add(it.ref.package)
    for im in graph.impls:
        if not im.interface.is_resolved:
            pkgs.add(im.interface.package)
        if not im.type.is_resolved:
            pkgs.add(im.type.package)
    return frozenset(pkgs)


def _rewrite(owner: Node, graph: PackageCallGraph, versions: Mapping[str, object]) -> _Part:
    """Replace UNRESOLVED versions with the ones chosen for this graph's
    owner. References to packages without a chosen version (optional
    dependencies left disabled) are dropped together with their edges."""
    mapping: dict[FunctionNode, Optional[FunctionNode]] = {}
    for n in graph.nodes:
        mapping[n] = _fill_node(n, versions)
    nodes = frozenset(v for v in mapping.values() if v is not None)
    edges = []
    for e in graph.edges:
        a, b = mapping[e.caller], mapping[e.callee]
        if a is not None and b is not None:
            edges.append(e if (a is e.caller and b is e.callee) else CallEdge(a, b, e.dispatch))
    interfaces = []
    for it in graph.interfaces:
        ref, ok = _fill_ref(it.ref, versions)
        if not ok:
            continue
        methods = []
        for m in it.methods:
            args = [_fill_ref(a, versions) for a in m.args]
            ret = _fill_ref(m.ret, versions)
            if all(ok for _, ok in args) and ret[1]:
                methods.append(MethodSig(m.name, tuple(a for a, _ in args), ret[0]))
        interfaces.append(Interface(ref, tuple(methods)))
    impls = []
    for im in graph.impls:
        fn = mapping.get(im.function)
        iface, ok1 = _fill_ref(im.interface, versions)
        typ, ok2 = _fill_ref(im.type, versions)
        if fn is not None and ok1 and ok2:
            impls.append(Impl(iface, typ, im.method, fn))
    dropped = sum(1 for v in mapping.values() if v is None)
    return _Part(owner, nodes, frozenset(edges), tuple(interfaces), tuple(impls), dropped)


class RewriteCache:
    """Shares rewritten graphs between trees that pick the same versions."""

    def __init__(self):
        self._pkgs: dict[Node, frozenset] = {}
        self._parts: dict[tuple, _Part] = {}

    def part(self, node: Node, graph: PackageCallGraph, versions: Mapping[str, object]) -> _Part:
        pkgs = self._pkgs.get(node)
        if pkgs is None:
            pkgs = self._pkgs[node] = _unresolved_packages(graph)
        relevant = tuple(sorted((p, versions[p]) for p in pkgs if p in versions))
        key = (node, relevant)
        part = self._parts.get(key)
        if part is None:
            part = self._parts[key] = _rewrite(node, graph, dict(relevant))
        return part


def unify_release(tree: ResolvedTree, store: CallGraphStore, cache: Optional[RewriteCache] = None) -> UnifiedGraph:
    """Merge the call graphs of a resolved tree in level order, completing
    every UNRESOLVED reference with the version the tree chose for it."""
    missing = [n for n in tree.nodes if not store.has(*n)]
    if missing:
        raise IncompleteInputError(missing)
    if cache is None:
        cache = RewriteCache()
    parts = tuple(cache.part(rel, store.get(*rel), tree.child_versions(rel)) for rel in tree.level_order())
    return UnifiedGraph(tree.root, parts)


def _self_sub(ref: Optional[TypeRef], self_type: TypeRef) -> Optional[TypeRef]:
    if ref is not None and ref.package is None and ref.path == "Self":
        return self_type
    return ref


def _compatible(method: MethodSig, impl: Impl) -> bool:
    fn = impl.function
    if len(method.args) != len(fn.args):
        return False
    for want, got in zip(method.args, fn.args):
        if _self_sub(want, impl.type) != got:
            return False
    return _self_sub(method.ret, impl.type) == fn.ret


def link_dynamic(unified: UnifiedGraph) -> UnifiedGraph:
    """Add an edge from every dynamic call site on an interface method to each
    matching implementation found anywhere in the merged graph. Matching is
    on interface identity (version included), method name, arity and
    parameter/return types, with ``Self`` standing for the implementing type."""
    methods: dict[FunctionNode, tuple[TypeRef, MethodSig]] = {}
    for p in unified.parts:
        for it in p.interfaces:
            for m in it.methods:
                methods[it.method_node(m)] = (it.ref, m)
    if not methods:
        return unified
    by_method: dict[tuple[str, str], list[Impl]] = {}
    for p in unified.parts:
        for im in p.impls:
            by_method.setdefault((im.interface.text, im.method), []).append(im)
    added = set(unified.added)
    for p in unified.parts:
        for e in p.dynamic:
            hit = methods.get(e.callee)
            if hit is None:
                continue
            ref, m = hit
            for im in by_method.get((ref.text, m.name), ()):
                # impl functions are owned by their part, so they are nodes
                if _compatible(m, im):
                    added.add(CallEdge(e.caller, im.function, "dynamic"))
    if len(added) == len(unified.added):
        return unified
    return UnifiedGraph(unified.root, unified.parts, frozenset(added))


@dataclass(frozen=True)
class CallFootprint:
    """What one root actually calls inside its own resolved tree.

    ``direct_hit``: direct dependencies receiving at least one call from the
    root's functions. ``reached``: transitive (non-direct) dependencies with
    a function reachable from the root's functions. ``direct_calls`` counts
    edges from root functions into direct dependencies; ``transitive_calls``
    counts inter-package edges with a reachable caller and a callee in a
    transitive dependency, each edge once.
    """

    root: Node
    direct_hit: frozenset
    reached: frozenset
    direct_calls: int
    transitive_calls: int


def call_footprint(tree: ResolvedTree, unified: UnifiedGraph) -> CallFootprint:
    root = tree.root
    direct = tree.direct
    transitive = tree.nodes - direct - {root}
    by_owner = {p.owner: p for p in unified.parts}
    extra: dict[FunctionNode, list[CallEdge]] = {}
    for p in unified.parts:
        for e in p.loose:
            extra.setdefault(e.caller, []).append(e)
    for e in unified.added:
        extra.setdefault(e.caller, []).append(e)

    def out_edges(n):
        p = by_owner.get(n.release)
        own = p.succ.get(n, ()) if p is not None else ()
        more = extra.get(n)
        return own if more is None else [*own, *more]

    start = list(by_owner[root].owned) if root in by_owner else []
    seen = set(start)
    stack = list(start)
    counted = set()
    while stack:
        n = stack.pop()
        for e in out_edges(n):
            c = e.callee
            if c not in seen:
                seen.add(c)
                stack.append(c)
            if e.is_inter_package:
                counted.add(e)
    direct_hit = set()
    direct_calls = 0
    transitive_calls = 0
    for e in counted:
        rel = e.callee.release
        if e.caller.release == root and rel in direct:
            direct_hit.add(rel)
            direct_calls += 1
        elif rel in transitive:
            transitive_calls += 1
    reached = frozenset(n.release for n in seen) & transitive
    return CallFootprint(root, frozenset(direct_hit), reached, direct_calls, transitive_calls)


def merge_unified(
    t: Optional[datetime],
    graphs: Iterable[UnifiedGraph],
    skipped: Optional[Mapping[str, str]] = None,
    footprints: Optional[Mapping[str, CallFootprint]] = None,
    provenance: Optional[Mapping[Node, frozenset]] = None,
) -> CDN:
    """Set-union of unified graphs; the result does not depend on order.

    ``provenance`` may map releases to the roots containing them; when
    omitted it is derived from the graphs' parts.
    """
    parts: dict[int, _Part] = {}
    added: set = set()
    owners: dict[Node, set] = {}
    for g in graphs:
        for p in g.parts:
            parts.setdefault(id(p), p)
            owners.setdefault(p.owner, set()).add(g.root[0])
        added.update(g.added)
    # parts are keyed by identity, so sort them for a deterministic
    # choice between owned and foreign copies
    plist = sorted(parts.values(), key=lambda p: (p.owner[0], str(p.owner[1])))
    return CDN(
        t,
        _union_nodes(plist),
        frozenset().union(*(p.edges for p in plist), added),
        dict(sorted(({k: frozenset(v) for k, v in owners.items()} if provenance is None else provenance).items(), key=lambda kv: (kv[0][0], str(kv[0][1])))),
        dict(sorted((skipped or {}).items())),
        dict(sorted((footprints or {}).items())),
    )


def build_snapshot(
    index: Index,
    t: datetime,
    store: CallGraphStore,
    version_policy: str = "latest",
    feature_policy: str = "default",
    roots: Optional[Sequence[str]] = None,
    exclude: Optional[frozenset] = None,
) -> tuple[PackageNetwork, CDN]:
    """Resolve the snapshot at ``t`` and fuse the call graphs of its roots."""
    network = package_network(index, t, version_policy, feature_policy, exclude)
    return network, build_cdn(index, t, store, version_policy, network=network, roots=roots)


def build_cdn(
    index: Index,
    t: datetime,
    store: CallGraphStore,
    version_policy: str = "latest",
    network: Optional[PackageNetwork] = None,
    roots: Optional[Sequence[str]] = None,
    feature_policy: str = "default",
) -> CDN:
    """The CDN at ``t``: union of the dynamically linked unified graph of
    every snapshot root. Roots that cannot be resolved or unified are
    recorded in ``skipped``."""
    if network is None:
        network = package_network(index, t, version_policy, feature_policy)
    skipped = dict(network.skipped)
    order = list(network.trees) if roots is None else [r for r in roots if r in network.trees]
    cache = RewriteCache()
    footprints: dict[str, CallFootprint] = {}

    def graphs():
        for name in order:
            tree = network.trees[name]
            try:
                g = unify_release(tree, store, cache)
            except IncompleteInputError as exc:
                log.info("skipping root %s: %s", name, exc)
                skipped[name] = str(exc)
                continue
            g = link_dynamic(g)
            footprints[name] = call_footprint(tree, g)
            yield g

    return merge_unified(t, graphs(), skipped, footprints)
