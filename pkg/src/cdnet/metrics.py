"""Network analyses over a snapshot.

Two views answer the same dependency questions. The metadata view reads the
resolved trees. The call view only counts a dependency when the root's own
functions call into it (direct) or reach it through call edges (transitive);
it reads the per-root call footprints recorded while building the CDN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import networkx as nx
import numpy as np

from .callgraph import DISPATCH_KINDS, EXTERN, FunctionNode, CallGraphStore
from .resolver import Node, PackageNetwork, ResolvedTree
from .unify import CDN, UnifiedGraph

__all__ = [
    "UnknownPackageError",
    "CallSummary",
    "DegreeHistogram",
    "MetadataView",
    "CallView",
    "BloatResult",
    "Comparison",
    "call_summary",
    "function_degrees",
    "degree_distribution",
    "dependency_counts",
    "dependent_counts",
    "api_call_counts",
    "coexistence_bloat",
    "reach",
    "function_reach",
    "function_reach_all",
    "spearman",
    "compare_networks",
    "summarize",
    "STATISTICS",
]


class UnknownPackageError(KeyError):
    def __str__(self):
        return f"unknown package {self.args[0]!r}"


def summarize(values: Sequence[float]) -> dict:
    """median, mean and 99th percentile; all None for no values."""
    if len(values) == 0:
        return {"count": 0, "median": None, "mean": None, "p99": None}
    arr = np.asarray(values, dtype=float)
    return {
        "count": int(arr.size),
        "median": float(np.median(arr)),
        "mean": float(arr.mean()),
        "p99": float(np.percentile(arr, 99)),
    }


# --- call accounting ----------------------------------------------------------


@dataclass(frozen=True)
class CallSummary:
    functions: Mapping[str, int]
    intra: Mapping[str, int]
    inter: Mapping[str, int]

    @property
    def total_functions(self) -> int:
        return sum(self.functions.values())

    @property
    def intra_total(self) -> int:
        return sum(self.intra.values())

    @property
    def inter_total(self) -> int:
        return sum(self.inter.values())

    @property
    def total_edges(self) -> int:
        return self.intra_total + self.inter_total

    def as_dict(self) -> dict:
        return {
            "functions": dict(self.functions),
            "intra": dict(self.intra),
            "inter": dict(self.inter),
            "total_functions": self.total_functions,
            "total_edges": self.total_edges,
        }


def call_summary(cdn: CDN) -> CallSummary:
    functions = {"public": 0, "private": 0}
    for n in cdn.nodes:
        functions[n.visibility] += 1
    intra = {k: 0 for k in DISPATCH_KINDS}
    inter = {k: 0 for k in DISPATCH_KINDS}
    for e in cdn.edges:
        (inter if e.caller.package != e.callee.package else intra)[e.dispatch] += 1
    return CallSummary(functions, intra, inter)


def _dispatch_set(dispatch) -> frozenset:
    if dispatch is None or dispatch == "all":
        return frozenset(DISPATCH_KINDS)
    if isinstance(dispatch, str):
        dispatch = (dispatch,)
    bad = set(dispatch) - set(DISPATCH_KINDS)
    if bad:
        raise ValueError(f"unknown dispatch kind(s): {sorted(bad)}")
    return frozenset(dispatch)


def function_degrees(cdn: CDN, direction: str = "out", dispatch=None, scope: str = "all") -> dict[FunctionNode, int]:
    """Number of distinct functions each function calls (``out``) or is
    called by (``in``) over qualifying edges. Functions without a
    qualifying edge are absent."""
    if direction not in ("in", "out"):
        raise ValueError("direction must be 'in' or 'out'")
    if scope not in ("all", "inter"):
        raise ValueError("scope must be 'all' or 'inter'")
    kinds = _dispatch_set(dispatch)
    nbrs: dict[FunctionNode, set] = {}
    for e in cdn.edges:
        if e.dispatch not in kinds:
            continue
        if scope == "inter" and e.caller.package == e.callee.package:
            continue
        a, b = (e.caller, e.callee) if direction == "out" else (e.callee, e.caller)
        nbrs.setdefault(a, set()).add(b)
    return {n: len(s) for n, s in nbrs.items()}


@dataclass(frozen=True)
class DegreeHistogram:
    direction: str
    dispatch: tuple[str, ...]
    scope: str
    counts: Mapping[int, int]

    def _degrees(self) -> np.ndarray:
        if not self.counts:
            return np.zeros(0)
        ks = sorted(self.counts)
        return np.repeat(np.asarray(ks, dtype=float), [self.counts[k] for k in ks])

    @property
    def functions(self) -> int:
        return sum(self.counts.values())

    @property
    def stats(self) -> dict:
        return summarize(self._degrees())

    def rows(self) -> list[tuple[int, int]]:
        return sorted(self.counts.items())


def degree_distribution(cdn: CDN, direction: str = "out", dispatch=None, scope: str = "all") -> DegreeHistogram:
    degrees = function_degrees(cdn, direction, dispatch, scope)
    counts: dict[int, int] = {}
    for d in degrees.values():
        counts[d] = counts.get(d, 0) + 1
    return DegreeHistogram(direction, tuple(sorted(_dispatch_set(dispatch))), scope, dict(sorted(counts.items())))


# --- dependency views -----------------------------------------------------------


class _View:
    name = "view"

    def __init__(self, network: PackageNetwork, deps: Mapping[str, tuple[frozenset, frozenset]]):
        self.network = network
        self._deps = dict(deps)
        known = set(network.roots) | set(network.skipped) | {n for n, _ in network.nodes}
        self._known = frozenset(known)
        self._rev: Optional[dict[str, tuple[set, set]]] = None

    @property
    def packages(self) -> list[str]:
        """Root packages this view has dependency sets for."""
        return sorted(self._deps)

    def dependencies(self, package: str) -> tuple[frozenset, frozenset]:
        try:
            return self._deps[package]
        except KeyError:
            raise UnknownPackageError(package) from None

    def _reverse(self) -> dict[str, tuple[set, set]]:
        if self._rev is None:
            rev: dict[str, tuple[set, set]] = {}
            for root, (direct, trans) in self._deps.items():
                for p, _ in direct:
                    if p != root:
                        d, t = rev.setdefault(p, (set(), set()))
                        d.add(root)
                        t.add(root)
                for p, _ in trans:
                    if p != root:
                        rev.setdefault(p, (set(), set()))[1].add(root)
            self._rev = rev
        return self._rev

    def dependents(self, package: str) -> tuple[frozenset, frozenset]:
        """Root packages depending on ``package`` directly, and at all."""
        if package not in self._known:
            raise UnknownPackageError(package)
        d, t = self._reverse().get(package, ((), ()))
        return frozenset(d), frozenset(t)


class MetadataView(_View):
    name = "metadata"

    def __init__(self, network: PackageNetwork):
        deps = {}
        for name, tree in network.trees.items():
            direct = tree.direct
            deps[name] = (direct, frozenset(tree.nodes - direct - {tree.root}))
        super().__init__(network, deps)


class CallView(_View):
    name = "call"

    def __init__(self, network: PackageNetwork, cdn: CDN):
        deps = {name: (fp.direct_hit, fp.reached) for name, fp in cdn.footprints.items()}
        super().__init__(network, deps)
        self.cdn = cdn

    def api_calls(self, package: str) -> tuple[int, int]:
        fp = self.cdn.footprints.get(package)
        if fp is None:
            raise UnknownPackageError(package)
        return fp.direct_calls, fp.transitive_calls


def dependency_counts(view: _View, package: str) -> tuple[int, int]:
    direct, trans = view.dependencies(package)
    return len(direct), len(trans)


def dependent_counts(view: _View, package: str) -> tuple[int, int]:
    direct, total = view.dependents(package)
    return len(direct), len(total)


def api_call_counts(view: CallView, package: str) -> tuple[int, int]:
    return view.api_calls(package)


def reach(view: _View, package: str) -> float:
    """Share of the other snapshot packages that depend on ``package``."""
    _, total = view.dependents(package)
    n = view.network.package_count
    return len(total) / (n - 1) if n > 1 else 0.0


def _reverse_adjacency(cdn: CDN) -> dict[FunctionNode, list[FunctionNode]]:
    pred: dict[FunctionNode, list[FunctionNode]] = {}
    for e in cdn.edges:
        pred.setdefault(e.callee, []).append(e.caller)
    return pred


def function_reach(cdn: CDN, function: FunctionNode, n_packages: int, _pred=None) -> float:
    """Share of other packages holding a function that transitively calls
    ``function``."""
    if function not in cdn.nodes:
        raise UnknownPackageError(str(function))
    pred = _reverse_adjacency(cdn) if _pred is None else _pred
    seen = {function}
    stack = [function]
    pkgs = set()
    while stack:
        n = stack.pop()
        for m in pred.get(n, ()):
            if m not in seen:
                seen.add(m)
                stack.append(m)
                pkgs.add(m.package)
    pkgs.discard(function.package)
    pkgs.discard(EXTERN)
    return len(pkgs) / (n_packages - 1) if n_packages > 1 else 0.0


def function_reach_all(cdn: CDN, n_packages: int) -> dict[FunctionNode, float]:
    """:func:`function_reach` for every function at once: package sets are
    propagated as bitsets over the condensation of the call graph."""
    if not cdn.nodes:
        return {}
    pkgs = sorted({n.package for n in cdn.nodes if n.package != EXTERN})
    bit = {p: 1 << i for i, p in enumerate(pkgs)}
    g = nx.DiGraph()
    g.add_nodes_from(cdn.nodes)
    g.add_edges_from((e.caller, e.callee) for e in cdn.edges)
    cond = nx.condensation(g)
    members = cond.graph["mapping"]
    own: dict[int, int] = {}
    for n, c in members.items():
        own[c] = own.get(c, 0) | bit.get(n.package, 0)
    reaching: dict[int, int] = {}
    for c in nx.topological_sort(cond):
        acc = own.get(c, 0)
        for p in cond.predecessors(c):
            acc |= reaching[p]
        reaching[c] = acc
    denom = n_packages - 1
    out = {}
    for n, c in members.items():
        bits = reaching[c] & ~bit.get(n.package, 0)
        # a function does not reach itself unless it sits on a cycle
        out[n] = bits.bit_count() / denom if denom > 0 else 0.0
    return out


# --- bloat ----------------------------------------------------------------------


@dataclass(frozen=True)
class BloatResult:
    root: Node
    percent: float
    coexisting: int
    total: int
    self_cycle: bool = False


def _bloat_from(root: Node, groups: Mapping[str, Sequence[Sequence[FunctionNode]]], self_cycle: bool) -> BloatResult:
    """``groups`` maps each package to its per-version function lists."""
    co = total = 0
    for per_version in groups.values():
        total += sum(len(fs) for fs in per_version)
        if len(per_version) < 2:
            continue
        versions: dict[tuple, set] = {}
        for fs in per_version:
            for n in fs:
                versions.setdefault(n.stripped(), set()).add(n.version)
        co += sum(1 for fs in per_version for n in fs if len(versions[n.stripped()]) >= 2)
    pct = 100.0 * co / total if total else 0.0
    return BloatResult(root, pct, co, total, self_cycle)


def coexistence_bloat(
    source: Union[UnifiedGraph, ResolvedTree],
    store: Optional[CallGraphStore] = None,
    cache: Optional[dict] = None,
) -> BloatResult:
    """Percentage of public dependency functions whose version-stripped
    identifier is present under two or more versions of its package.

    Functions of the root's own package are left out, so a dependency cycle
    back onto the root (flagged in ``self_cycle``) adds nothing. ``cache``
    may be shared across calls on the same store.
    """
    groups: dict[str, dict] = {}
    if isinstance(source, UnifiedGraph):
        root = source.root
        own_versions = {n.version for n in source.nodes if n.package == root[0]}
        for n in source.nodes:
            if n.visibility == "public" and n.package not in (root[0], EXTERN):
                groups.setdefault(n.package, {}).setdefault(n.version, []).append(n)
        return _bloat_from(root, {p: list(vs.values()) for p, vs in groups.items()}, len(own_versions) > 1)
    if store is None:
        raise TypeError("a resolved tree needs a call-graph store")
    tree = source
    root = tree.root
    cache = {} if cache is None else cache
    for rel in sorted(tree.nodes):
        if rel[0] == root[0]:
            continue
        funcs = cache.get(rel)
        if funcs is None:
            g = store.get(*rel)
            funcs = cache[rel] = [n for n in g.nodes if n.release == rel and n.visibility == "public"]
        groups.setdefault(rel[0], {})[rel[1]] = funcs
    self_cycle = bool(tree.self_cycles) or any(n[0] == root[0] and n != root for n in tree.nodes)
    return _bloat_from(root, {p: list(vs.values()) for p, vs in groups.items()}, self_cycle)


# --- correlation ----------------------------------------------------------------


def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho with average ranks for ties. Raises ``ValueError`` for
    mismatched lengths, fewer than two values or a constant series."""
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least two observations")
    rx, ry = _average_ranks(list(xs)), _average_ranks(list(ys))
    n = len(rx)
    mx, my = math.fsum(rx) / n, math.fsum(ry) / n
    dx = [r - mx for r in rx]
    dy = [r - my for r in ry]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ValueError("constant input: correlation undefined")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    rho = sxy / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


STATISTICS: dict[str, Callable[[_View, str], float]] = {
    "direct": lambda v, p: dependency_counts(v, p)[0],
    "transitive": lambda v, p: dependency_counts(v, p)[1],
    "direct_dependents": lambda v, p: dependent_counts(v, p)[0],
    "total_dependents": lambda v, p: dependent_counts(v, p)[1],
    "reach": reach,
}


@dataclass(frozen=True)
class Comparison:
    statistic: str
    packages: tuple[str, ...]
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    rho: Optional[float]
    degenerate: bool
    reason: str = ""

    def rows(self) -> list[tuple]:
        return list(zip(self.packages, self.xs, self.ys))


def compare_networks(view_a: _View, view_b: _View, statistic: str = "direct") -> Comparison:
    """Pair a per-package statistic over the packages both views cover and
    correlate it. Fewer than two shared packages or a constant series give
    a degenerate result with ``rho=None``."""
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    shared = sorted(set(view_a.packages) & set(view_b.packages))
    if not shared:
        raise ValueError("views share no packages")
    f = STATISTICS[statistic]
    xs = tuple(float(f(view_a, p)) for p in shared)
    ys = tuple(float(f(view_b, p)) for p in shared)
    try:
        rho = spearman(xs, ys)
    except ValueError as exc:
        return Comparison(statistic, tuple(shared), xs, ys, None, True, str(exc))
    return Comparison(statistic, tuple(shared), xs, ys, rho, False)
