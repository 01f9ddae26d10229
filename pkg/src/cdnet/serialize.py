"""On-disk forms of snapshots: delimiter-separated node/edge files, JSON-lines
trees and call footprints, DOT, and a small manifest.

Every writer sorts its rows so that rebuilding from the same inputs gives
byte-identical files. Files are written to a temporary name and renamed.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from contextlib import contextmanager
from datetime import datetime
from typing import Iterable, Iterator, Optional

from .callgraph import DEFAULT_REGISTRY, EXTERN, CallEdge, FunctionNode
from .index import DependencySpec, parse_timestamp
from .resolver import Node, PackageNetwork, ResolvedTree
from .semver import Version, parse_version
from .unify import CDN, CallFootprint

__all__ = [
    "atomic_write",
    "write_pdn",
    "read_pdn",
    "write_cdn",
    "read_cdn",
    "pdn_to_dot",
    "cdn_to_dot",
    "write_snapshot",
    "read_snapshot",
    "snapshot_dirname",
]

PDN_NODES = "pdn_nodes.csv"
PDN_EDGES = "pdn_edges.csv"
PDN_ROOTS = "pdn_roots.csv"
TREES = "trees.jsonl"
CDN_NODES = "cdn_nodes.tsv"
CDN_EDGES = "cdn_edges.tsv"
FOOTPRINTS = "footprints.jsonl"
MANIFEST = "manifest.json"


@contextmanager
def atomic_write(path: str) -> Iterator[io.StringIO]:
    buf = io.StringIO()
    yield buf
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_time(t: Optional[datetime]) -> Optional[str]:
    return None if t is None else t.isoformat().replace("+00:00", "Z")


def snapshot_dirname(t: datetime) -> str:
    return t.strftime("%Y-%m-%dT%H%M%SZ")


def _node_key(n: Node):
    return (n[0], n[1])


def _spec_dict(s: DependencySpec) -> dict:
    return {
        "name": s.name,
        "req": s.req,
        "kind": s.kind,
        "optional": s.optional,
        "features": list(s.features),
        "default_features": s.default_features,
        "target": s.target,
    }


def _tree_dict(tree: ResolvedTree) -> dict:
    children = []
    for parent in sorted(tree.children):
        for child, spec in tree.children[parent]:
            children.append([parent[0], str(parent[1]), child[0], str(child[1]), _spec_dict(spec)])
    return {
        "root": [tree.root[0], str(tree.root[1])],
        "nodes": [[n, str(v)] for n, v in sorted(tree.nodes)],
        "children": children,
        "features": {f"{n} {v}": sorted(fs) for (n, v), fs in sorted(tree.features.items())},
    }


def _tree_from(doc: dict) -> ResolvedTree:
    root = (doc["root"][0], parse_version(doc["root"][1]))
    nodes = frozenset((n, parse_version(v)) for n, v in doc["nodes"])
    children: dict[Node, list] = {n: [] for n in nodes}
    for pn, pv, cn, cv, spec in doc["children"]:
        children[(pn, parse_version(pv))].append(
            (
                (cn, parse_version(cv)),
                DependencySpec(
                    spec["name"], spec["req"], spec["kind"], spec["optional"], tuple(spec["features"]),
                    spec["default_features"], spec["target"],
                ),
            )
        )
    feats = {}
    for k, fs in doc.get("features", {}).items():
        n, v = k.split(" ", 1)
        feats[(n, parse_version(v))] = frozenset(fs)
    return ResolvedTree(root, nodes, {k: tuple(v) for k, v in children.items() if v}, feats)


def write_pdn(network: PackageNetwork, outdir: str) -> list[str]:
    with atomic_write(os.path.join(outdir, PDN_NODES)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "version"])
        for n, v in sorted(network.nodes):
            w.writerow([n, str(v)])
    with atomic_write(os.path.join(outdir, PDN_EDGES)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from_name", "from_version", "to_name", "to_version"])
        for (a, av), (b, bv) in sorted(network.edges):
            w.writerow([a, str(av), b, str(bv)])
    with atomic_write(os.path.join(outdir, PDN_ROOTS)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "version", "status"])
        for name, (n, v) in sorted(network.roots.items()):
            w.writerow([n, str(v), "resolved"])
        for name in sorted(network.skipped):
            w.writerow([name, "", "skipped"])
    with atomic_write(os.path.join(outdir, TREES)) as fh:
        for name in sorted(network.trees):
            fh.write(json.dumps(_tree_dict(network.trees[name]), sort_keys=True) + "\n")
    return [PDN_NODES, PDN_EDGES, PDN_ROOTS, TREES]


def read_pdn(outdir: str, time: Optional[datetime] = None, skipped: Optional[dict] = None) -> PackageNetwork:
    with open(os.path.join(outdir, PDN_NODES), encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    nodes = frozenset((n, parse_version(v)) for n, v in rows)
    with open(os.path.join(outdir, PDN_EDGES), encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    edges = frozenset(((a, parse_version(av)), (b, parse_version(bv))) for a, av, b, bv in rows)
    trees = {}
    with open(os.path.join(outdir, TREES), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                tree = _tree_from(json.loads(line))
                trees[tree.root[0]] = tree
    if skipped is None:
        skipped = {}
        with open(os.path.join(outdir, PDN_ROOTS), encoding="utf-8", newline="") as fh:
            for name, _, status in list(csv.reader(fh))[1:]:
                if status == "skipped":
                    skipped[name] = "skipped"
    return PackageNetwork(
        time, nodes, edges, {k: t.root for k, t in sorted(trees.items())}, dict(sorted(trees.items())), dict(sorted(skipped.items()))
    )


def _vtext(v) -> str:
    return str(v) if isinstance(v, Version) else ""


def write_cdn(cdn: CDN, outdir: str) -> list[str]:
    with atomic_write(os.path.join(outdir, CDN_NODES)) as fh:
        fh.write("id\tpackage\tversion\tvisibility\n")
        for n in sorted(cdn.nodes):
            fh.write(f"{n.key}\t{n.package}\t{_vtext(n.version)}\t{n.visibility}\n")
    with atomic_write(os.path.join(outdir, CDN_EDGES)) as fh:
        fh.write("caller\tcallee\tdispatch\n")
        for e in sorted(cdn.edges, key=lambda e: (e.caller.key, e.callee.key, e.dispatch)):
            fh.write(f"{e.caller.key}\t{e.callee.key}\t{e.dispatch}\n")
    with atomic_write(os.path.join(outdir, FOOTPRINTS)) as fh:
        for name, fp in sorted(cdn.footprints.items()):
            doc = {
                "root": [fp.root[0], str(fp.root[1])],
                "direct_hit": [[n, str(v)] for n, v in sorted(fp.direct_hit)],
                "reached": [[n, str(v)] for n, v in sorted(fp.reached)],
                "direct_calls": fp.direct_calls,
                "transitive_calls": fp.transitive_calls,
            }
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
    return [CDN_NODES, CDN_EDGES, FOOTPRINTS]


def read_cdn(outdir: str, time: Optional[datetime] = None, registry: str = DEFAULT_REGISTRY) -> CDN:
    nodes: dict[str, FunctionNode] = {}
    with open(os.path.join(outdir, CDN_NODES), encoding="utf-8") as fh:
        next(fh, None)
        for line in fh:
            key, pkg, ver, vis = line.rstrip("\n").split("\t")
            version = None if pkg == EXTERN or not ver else parse_version(ver)
            nodes[key] = FunctionNode.from_key(key, pkg, version, vis, registry)
    edges = set()
    with open(os.path.join(outdir, CDN_EDGES), encoding="utf-8") as fh:
        next(fh, None)
        for line in fh:
            a, b, d = line.rstrip("\n").split("\t")
            edges.add(CallEdge(nodes[a], nodes[b], d))
    footprints = {}
    path = os.path.join(outdir, FOOTPRINTS)
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                doc = json.loads(line)
                root = (doc["root"][0], parse_version(doc["root"][1]))
                footprints[root[0]] = CallFootprint(
                    root,
                    frozenset((n, parse_version(v)) for n, v in doc["direct_hit"]),
                    frozenset((n, parse_version(v)) for n, v in doc["reached"]),
                    doc["direct_calls"],
                    doc["transitive_calls"],
                )
    return CDN(time, frozenset(nodes.values()), frozenset(edges), {}, {}, footprints)


def _dot_id(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def pdn_to_dot(network: PackageNetwork) -> str:
    lines = ["digraph pdn {", "  rankdir=LR;"]
    for n, v in sorted(network.nodes):
        lines.append(f"  {_dot_id(f'{n} {v}')};")
    for (a, av), (b, bv) in sorted(network.edges):
        lines.append(f"  {_dot_id(f'{a} {av}')} -> {_dot_id(f'{b} {bv}')};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def cdn_to_dot(cdn: CDN) -> str:
    """Functions grouped into one cluster per package release."""
    groups: dict[tuple[str, str], list[FunctionNode]] = {}
    for n in cdn.nodes:
        groups.setdefault((n.package, _vtext(n.version)), []).append(n)
    lines = ["digraph cdn {", "  rankdir=LR;"]
    for i, (pkg, ver) in enumerate(sorted(groups)):
        label = f"{pkg} {ver}".strip()
        lines.append(f"  subgraph cluster_{i} {{")
        lines.append(f"    label={_dot_id(label)};")
        for n in sorted(groups[(pkg, ver)]):
            lines.append(f"    {_dot_id(n.key)} [label={_dot_id(n.path)}];")
        lines.append("  }")
    for e in sorted(cdn.edges, key=lambda e: (e.caller.key, e.callee.key, e.dispatch)):
        style = {"static": "solid", "dynamic": "dashed", "macro": "dotted"}[e.dispatch]
        lines.append(f"  {_dot_id(e.caller.key)} -> {_dot_id(e.callee.key)} [style={style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_snapshot(network: PackageNetwork, cdn: CDN, outdir: str, extra: Optional[dict] = None) -> list[str]:
    files = write_pdn(network, outdir) + write_cdn(cdn, outdir)
    with atomic_write(os.path.join(outdir, "pdn.dot")) as fh:
        fh.write(pdn_to_dot(network))
    with atomic_write(os.path.join(outdir, "cdn.dot")) as fh:
        fh.write(cdn_to_dot(cdn))
    files += ["pdn.dot", "cdn.dot"]
    manifest = {
        "time": _fmt_time(network.time),
        "packages": network.package_count,
        "roots": len(network.trees),
        "pdn_nodes": len(network.nodes),
        "pdn_edges": len(network.edges),
        "cdn_nodes": len(cdn.nodes),
        "cdn_edges": len(cdn.edges),
        "skipped": dict(sorted(cdn.skipped.items())),
        "self_cycles": sorted(f"{n} {v}" for n, v in network.self_cycles),
        "files": sorted(files + [MANIFEST]),
    }
    if extra:
        manifest.update(extra)
    with atomic_write(os.path.join(outdir, MANIFEST)) as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sorted(files + [MANIFEST])


def read_snapshot(outdir: str) -> tuple[PackageNetwork, CDN, dict]:
    with open(os.path.join(outdir, MANIFEST), encoding="utf-8") as fh:
        manifest = json.load(fh)
    t = parse_timestamp(manifest["time"]) if manifest.get("time") else None
    network = read_pdn(outdir, t)
    network.package_total = manifest.get("packages")
    cdn = read_cdn(outdir, t)
    return network, cdn, manifest
