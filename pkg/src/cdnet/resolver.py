"""Retroactive dependency resolution and the package-level network.

Resolution rules
----------------
Every requirement ``(package, constraint)`` is assigned to the compat class
of the newest release that satisfies it on its own. All requirements that
land in the same ``(package, class)`` group are merged, and the group gets
the newest release satisfying the whole conjunction. Incompatible classes
of one package coexist as separate nodes. The root release pins its own
group.

The tree is computed as a fixpoint: each round expands the tree breadth
first from the root using the current group choices, then recomputes every
group from the requirements of the nodes it reached. Adding a requirement
can only lower a group's choice, and dropping an unreachable node drops its
requirements again, so choices settle once the requirements do. On acyclic
package graphs this takes at most one round per dependency level.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Mapping, Optional, Sequence

from .index import DependencySpec, Index, Release, mirror_at, runtime_deps, validate
from .semver import Version, compat_class, matches

__all__ = [
    "Node",
    "ResolvedTree",
    "PackageNetwork",
    "UnresolvableError",
    "NonConvergentError",
    "resolve_tree",
    "package_network",
    "snapshot_roots",
    "root_features",
    "tree_changed",
    "changed_fraction",
]

log = logging.getLogger(__name__)

Node = tuple[str, Version]
Group = tuple[str, tuple[int, ...]]


class UnresolvableError(Exception):
    def __init__(self, package: str, constraint: str, path: Sequence[Node], reason: str = "no satisfying version"):
        self.package = package
        self.constraint = constraint
        self.path = tuple(path)
        trail = " -> ".join(f"{n} {v}" for n, v in self.path) or "<root>"
        super().__init__(f"{reason}: {package} {constraint!r} (required via {trail})")


class NonConvergentError(UnresolvableError):
    def __init__(self, root: Node):
        Exception.__init__(self, f"resolution of {root[0]} {root[1]} does not settle")
        self.package = root[0]
        self.constraint = ""
        self.path = (root,)


@dataclass(frozen=True)
class ResolvedTree:
    root: Node
    nodes: frozenset
    children: Mapping[Node, tuple[tuple[Node, DependencySpec], ...]]
    features: Mapping[Node, frozenset] = field(default_factory=dict, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ResolvedTree):
            return NotImplemented
        return self.root == other.root and self.nodes == other.nodes and self.edge_set() == other.edge_set()

    def __hash__(self):
        return hash((self.root, self.nodes))

    def edge_set(self) -> frozenset:
        return frozenset(
            (parent, child, spec.name, spec.req)
            for parent, kids in self.children.items()
            for child, spec in kids
        )

    def child_versions(self, parent: Node) -> dict[str, Version]:
        """Package -> version chosen for ``parent``'s dependencies; the
        highest wins when one parent reaches two classes of a package."""
        out: dict[str, Version] = {}
        for (name, v), _ in self.children.get(parent, ()):
            if name not in out or v > out[name]:
                out[name] = v
        return out

    def level_order(self) -> list[Node]:
        seen = {self.root}
        order = [self.root]
        queue = deque([self.root])
        while queue:
            n = queue.popleft()
            for child, _ in self.children.get(n, ()):
                if child not in seen:
                    seen.add(child)
                    order.append(child)
                    queue.append(child)
        return order

    @property
    def direct(self) -> frozenset:
        return frozenset(c for c, _ in self.children.get(self.root, ()) if c != self.root)

    @property
    def self_cycles(self) -> frozenset:
        """Nodes with a dependency on their own package (any version)."""
        return frozenset(p for p, kids in self.children.items() if any(c[0] == p[0] for c, _ in kids))

    def versions_by_package(self) -> dict[str, tuple[Version, ...]]:
        out: dict[str, list[Version]] = {}
        for name, v in self.nodes:
            out.setdefault(name, []).append(v)
        return {k: tuple(sorted(vs)) for k, vs in sorted(out.items())}


@dataclass
class PackageNetwork:
    time: Optional[datetime]
    nodes: frozenset
    edges: frozenset
    roots: dict[str, Node] = field(default_factory=dict)
    trees: dict[str, ResolvedTree] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    package_total: Optional[int] = None

    @property
    def package_count(self) -> int:
        """Packages in the snapshot, resolvable or not."""
        if self.package_total is not None:
            return self.package_total
        return len(set(self.roots) | set(self.skipped))

    @property
    def self_cycles(self) -> frozenset:
        return frozenset(a for a, b in self.edges if a[0] == b[0])

    def successors(self) -> dict[Node, list[Node]]:
        adj: dict[Node, list[Node]] = {n: [] for n in self.nodes}
        for a, b in sorted(self.edges):
            adj[a].append(b)
        return adj


class _Candidates:
    """Eligible versions per package: not yanked, not excluded, created <= t."""

    def __init__(self, mirror: Index, t: Optional[datetime], exclude: frozenset):
        self._mirror = mirror
        self._t = t
        self._exclude = exclude
        self._cache: dict[str, list[Version]] = {}

    def versions(self, name: str) -> list[Version]:
        vs = self._cache.get(name)
        if vs is None:
            vs = [
                r.version
                for r in reversed(self._mirror.releases_of(name))
                if not r.yanked and r.key not in self._exclude and (self._t is None or r.created_at <= self._t)
            ]
            self._cache[name] = vs
        return vs

    def newest(self, name: str, constraints: Iterable, cls=None) -> Optional[Version]:
        constraints = list(constraints)
        for v in self.versions(name):
            if cls is not None and compat_class(v) != cls:
                continue
            if all(matches(c, v) for c in constraints):
                return v
        return None


def _child_features(release: Release, specs: Iterable[DependencySpec]) -> frozenset:
    known = release.known_features
    on: set[str] = set()
    for s in specs:
        if s.default_features:
            on.update(release.default_features)
        on.update(f for f in s.features if f in known)
    return frozenset(f for f in on if f in known)


def root_features(release: Release, policy: str = "default") -> frozenset:
    if policy == "default":
        return frozenset(release.default_features)
    if policy == "all":
        return release.known_features
    if policy == "none":
        return frozenset()
    raise ValueError(f"unknown feature policy {policy!r}")


def resolve_tree(
    mirror: Index,
    release: Release,
    t: Optional[datetime] = None,
    enabled_features: Optional[Iterable[str]] = None,
    exclude: frozenset = frozenset(),
    max_rounds: int = 200,
) -> ResolvedTree:
    """Resolve ``release`` against the releases of ``mirror`` visible at ``t``."""
    root: Node = release.key
    if mirror.get(*root) is None:
        raise KeyError(f"{release} is not in the mirror")
    cands = _Candidates(mirror, t, exclude)
    root_feats = frozenset(release.default_features if enabled_features is None else enabled_features)
    root_group: Group = (root[0], compat_class(root[1]))
    class_cache: dict[tuple[str, str], Optional[tuple[int, ...]]] = {}

    def group_of(spec: DependencySpec) -> Optional[Group]:
        key = (spec.name, spec.req)
        if key not in class_cache:
            best = cands.newest(spec.name, [spec.constraint])
            class_cache[key] = None if best is None else compat_class(best)
        cls = class_cache[key]
        return None if cls is None else (spec.name, cls)

    choices: dict[Group, Version] = {}
    node_feats: dict[Node, frozenset] = {root: root_feats}
    seen_states: set = set()

    for _ in range(max_rounds):
        # expand with the current choices
        visited = {root}
        queue = deque([root])
        children: dict[Node, list[tuple[Node, DependencySpec]]] = {}
        reqs: dict[Group, list[tuple[Node, DependencySpec]]] = {}
        failures: list[tuple[Node, DependencySpec]] = []
        parents: dict[Node, Node] = {}
        while queue:
            node = queue.popleft()
            rel = mirror.get(*node)
            kids = children.setdefault(node, [])
            for spec in runtime_deps(rel, node_feats.get(node, frozenset())):
                g = group_of(spec)
                if g is None:
                    failures.append((node, spec))
                    continue
                reqs.setdefault(g, []).append((node, spec))
                v = root[1] if g == root_group else choices.get(g)
                if v is None or not matches(spec.constraint, v):
                    continue
                child = (spec.name, v)
                kids.append((child, spec))
                if child not in visited:
                    visited.add(child)
                    parents[child] = node
                    queue.append(child)

        new_choices: dict[Group, Version] = {}
        conflicts: list[Group] = []
        for g, rs in reqs.items():
            if g == root_group:
                continue
            v = cands.newest(g[0], [s.constraint for _, s in rs], g[1])
            if v is None:
                conflicts.append(g)
            else:
                new_choices[g] = v
        new_feats = {root: root_feats}
        for g, v in new_choices.items():
            n = (g[0], v)
            new_feats[n] = _child_features(mirror.get(*n), [s for _, s in reqs[g]])

        if new_choices == choices and new_feats == node_feats:
            break
        state = (frozenset(new_choices.items()), frozenset(new_feats.items()))
        if state in seen_states:
            raise NonConvergentError(root)
        seen_states.add(state)
        choices = new_choices
        node_feats = new_feats
    else:
        raise NonConvergentError(root)

    def path_to(n: Node) -> list[Node]:
        out = [n]
        while n in parents:
            n = parents[n]
            out.append(n)
        return out[::-1]

    if failures:
        node, spec = sorted(failures, key=lambda f: (f[0], f[1].name, f[1].req))[0]
        raise UnresolvableError(spec.name, spec.req, path_to(node))
    if conflicts:
        g = sorted(conflicts)[0]
        node, spec = reqs[g][0]
        reqtext = ", ".join(sorted({s.req for _, s in reqs[g]}))
        raise UnresolvableError(g[0], reqtext, path_to(node), "conflicting requirements")
    for g, rs in reqs.items():
        if g == root_group:
            for node, spec in rs:
                if not matches(spec.constraint, root[1]):
                    raise UnresolvableError(spec.name, spec.req, path_to(node), "conflicts with root")

    frozen_children = {n: tuple(sorted(kids, key=lambda k: (k[0], k[1].name, k[1].req, k[1].kind))) for n, kids in children.items()}
    return ResolvedTree(root, frozenset(visited), frozen_children, {n: node_feats.get(n, frozenset()) for n in visited})


def snapshot_roots(mirror: Index, exclude: frozenset = frozenset()) -> dict[str, Release]:
    """Most recently published usable release of every package."""
    out = {}
    for name in mirror.packages:
        r = mirror.latest_published(name, exclude)
        if r is not None:
            out[name] = r
    return out


def package_network(
    index: Index,
    t: datetime,
    version_policy: str = "latest",
    feature_policy: str = "default",
    exclude: Optional[frozenset] = None,
    roots: Optional[Sequence[str]] = None,
) -> PackageNetwork:
    """Union of the resolved trees of every snapshot root at ``t``.

    ``exclude`` defaults to the releases flagged by :func:`validate`.
    Unresolvable roots are recorded in ``skipped``.
    """
    if version_policy not in ("latest", "latest-per-package"):
        raise ValueError(f"unsupported version policy {version_policy!r}")
    if exclude is None:
        exclude = validate(index).flagged
    mirror = mirror_at(index, t)
    root_rels = snapshot_roots(mirror, exclude)
    order = list(root_rels) if roots is None else [r for r in roots if r in root_rels]
    nodes: set[Node] = set()
    edges: set[tuple[Node, Node]] = set()
    trees: dict[str, ResolvedTree] = {}
    skipped: dict[str, str] = {}
    for name in order:
        rel = root_rels[name]
        try:
            tree = resolve_tree(mirror, rel, t, root_features(rel, feature_policy), exclude)
        except UnresolvableError as exc:
            log.info("skipping root %s: %s", rel, exc)
            skipped[name] = str(exc)
            continue
        trees[name] = tree
        nodes.update(tree.nodes)
        for parent, kids in tree.children.items():
            for child, _ in kids:
                edges.add((parent, child))
    return PackageNetwork(
        t,
        frozenset(nodes),
        frozenset(edges),
        {n: tr.root for n, tr in sorted(trees.items())},
        dict(sorted(trees.items())),
        dict(sorted(skipped.items())),
        len(root_rels),
    )


def tree_changed(a: ResolvedTree, b: ResolvedTree) -> tuple[bool, dict[str, tuple[tuple[Version, ...], tuple[Version, ...]]]]:
    """Compare the package -> versions multisets of two trees of one root."""
    if a.root[0] != b.root[0]:
        raise ValueError("trees have different root packages")
    va, vb = a.versions_by_package(), b.versions_by_package()
    diff = {}
    for name in sorted(set(va) | set(vb)):
        old, new = va.get(name, ()), vb.get(name, ())
        if old != new:
            diff[name] = (old, new)
    return bool(diff), diff


def changed_fraction(
    index: Index,
    baseline: datetime,
    windows: Sequence[timedelta],
    exclude: Optional[frozenset] = None,
) -> list[float]:
    """Share of baseline roots whose tree differs when re-resolved after each
    window. Roots are the latest release per package at ``baseline`` with at
    least one runtime dependency; a root that no longer resolves counts as
    changed."""
    for w in windows:
        if w <= timedelta(0):
            raise ValueError("windows must be positive")
    if exclude is None:
        exclude = validate(index).flagged
    base_mirror = mirror_at(index, baseline)
    base_trees: dict[str, tuple[Release, ResolvedTree]] = {}
    for name, rel in snapshot_roots(base_mirror, exclude).items():
        if not runtime_deps(rel, rel.default_features):
            continue
        try:
            base_trees[name] = (rel, resolve_tree(base_mirror, rel, baseline, None, exclude))
        except UnresolvableError:
            continue
    if not base_trees:
        return [0.0 for _ in windows]
    out = []
    for w in windows:
        t = baseline + w
        mirror = mirror_at(index, t)
        changed = 0
        for rel, tree in base_trees.values():
            try:
                later = resolve_tree(mirror, rel, t, None, exclude)
            except UnresolvableError:
                changed += 1
                continue
            if tree_changed(tree, later)[0]:
                changed += 1
        out.append(changed / len(base_trees))
    return out
