"""Per-package call graphs and their annotation with global identifiers.

Call-graph file (JSON)::

    {
      "package": "Lib1", "version": "3.2.0",
      "functions": [
        {"id": 0, "package": "Lib1", "version": null, "path": "bar",
         "visibility": "public",
         "args": [{"package": "Lib2", "path": "Token"}], "ret": null}
      ],
      "edges": [{"caller": 0, "callee": 1, "dispatch": "static"}],
      "type_hierarchy": {
        "interfaces": [{"path": "Serialize",
                        "methods": [{"name": "serialize", "args": [], "ret": null}]}],
        "impls": [{"interface": {"package": "serde", "path": "Serialize"},
                   "type": {"package": "B", "path": "Foo"},
                   "method": "serialize", "function": 3}]
      }
    }

``dispatch`` is ``static``, ``dynamic`` or ``macro``. A type-ref with a null
package, or a package in :data:`STD_PACKAGES`, is a language type and stays
unannotated. Functions of standard-library packages are dropped. Functions
of the ``extern`` pseudo-package stand for foreign calls.

A dynamic call site is an edge whose callee is the method node of an
interface, i.e. a function whose path is ``<interface path>::<method>``
with the declared signature.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, TextIO, Union

from .index import DependencySpec, Index, Release
from .semver import SemverError, Version, parse_version

__all__ = [
    "UNRESOLVED",
    "DISPATCH_KINDS",
    "STD_PACKAGES",
    "EXTERN",
    "DEFAULT_REGISTRY",
    "TypeRef",
    "FunctionNode",
    "CallEdge",
    "MethodSig",
    "Interface",
    "Impl",
    "PackageCallGraph",
    "RawTypeRef",
    "RawFunction",
    "RawCallGraph",
    "CallGraphParseError",
    "DanglingReferenceError",
    "MissingCallGraphError",
    "load_callgraph",
    "parse_callgraph",
    "dump_callgraph",
    "callgraph_to_dict",
    "annotate",
    "to_raw",
    "CallGraphStore",
]

DISPATCH_KINDS = ("static", "dynamic", "macro")
STD_PACKAGES = frozenset({"std", "core", "alloc", "proc_macro", "test"})
EXTERN = "extern"
DEFAULT_REGISTRY = "io::crates"


class _Unresolved:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "<?>"

    def __reduce__(self):
        return (_Unresolved, ())


UNRESOLVED = _Unresolved()

VersionSlot = Union[Version, _Unresolved, None]


def _vtoken(version: VersionSlot) -> str:
    if version is UNRESOLVED:
        return "<?>"
    if version is None:
        return ""
    return f"v{version}"


class CallGraphParseError(ValueError):
    def __init__(self, message: str, locus: str = "", source: str = ""):
        self.locus = locus
        prefix = f"{source}: " if source else ""
        where = f"{locus}: " if locus else ""
        super().__init__(prefix + where + message)


class DanglingReferenceError(ValueError):
    pass


class MissingCallGraphError(KeyError):
    def __str__(self):
        return self.args[0]


@dataclass(frozen=True, eq=False)
class TypeRef:
    registry: str
    package: Optional[str]
    version: VersionSlot
    path: str
    text: str = field(init=False, repr=False)

    def __post_init__(self):
        if self.package is None:
            text = self.path
        else:
            text = f"{self.registry}::{self.package}{_vtoken(self.version)}::{self.path}"
        object.__setattr__(self, "text", text)

    def __eq__(self, other):
        return isinstance(other, TypeRef) and self.text == other.text

    def __hash__(self):
        return hash(self.text)

    def __str__(self):
        return self.text

    @property
    def is_resolved(self) -> bool:
        return self.version is not UNRESOLVED

    def with_version(self, version: VersionSlot) -> "TypeRef":
        return TypeRef(self.registry, self.package, version, self.path)

    def stripped(self) -> str:
        return self.path if self.package is None else f"{self.package}::{self.path}"


class FunctionNode(str):
    """A function qualified by registry, package and version.

    The value of the string is the canonical id, so identity, hashing and
    ordering all follow it; visibility is an attribute.
    """

    registry: str
    package: str
    version: VersionSlot
    path: str
    args: tuple[TypeRef, ...]
    ret: Optional[TypeRef]
    visibility: str
    release: tuple[str, VersionSlot]

    def __new__(
        cls,
        registry: str,
        package: str,
        version: VersionSlot,
        path: str,
        args: Sequence[TypeRef] = (),
        ret: Optional[TypeRef] = None,
        visibility: str = "public",
    ):
        sig = ""
        if args:
            sig = "(" + ", ".join(a.text for a in args) + ")"
        if ret is not None:
            sig += " -> " + ret.text
        self = super().__new__(cls, f"{registry}::{package}{_vtoken(version)}::{path}{sig}")
        self.__dict__.update(
            registry=registry,
            package=package,
            version=version,
            path=path,
            args=tuple(args),
            ret=ret,
            visibility=visibility,
            release=(package, version),
        )
        return self

    def __setattr__(self, name, value):
        raise AttributeError("FunctionNode is immutable")

    def __reduce__(self):
        return (FunctionNode, (self.registry, self.package, self.version, self.path, self.args, self.ret, self.visibility))

    def __repr__(self):
        return f"FunctionNode({str.__repr__(self)})"

    @property
    def key(self) -> str:
        return str.__str__(self)

    @property
    def is_resolved(self) -> bool:
        if self.version is UNRESOLVED:
            return False
        if self.ret is not None and not self.ret.is_resolved:
            return False
        return all(a.is_resolved for a in self.args)

    @property
    def is_extern(self) -> bool:
        return self.package == EXTERN

    def stripped(self) -> tuple:
        """Identifier with every version removed (used to spot coexisting copies)."""
        return (
            self.package,
            self.path,
            tuple(a.stripped() for a in self.args),
            self.ret.stripped() if self.ret is not None else None,
        )

    @classmethod
    def from_key(cls, key: str, package: str, version: VersionSlot, visibility: str, registry: str = DEFAULT_REGISTRY) -> "FunctionNode":
        """Rebuild a node from its serialized canonical id; the signature
        stays part of ``path``."""
        prefix = f"{registry}::{package}{_vtoken(version)}::"
        if not key.startswith(prefix):
            raise CallGraphParseError(f"id {key!r} does not match {package} {version}")
        return cls(registry, package, version, key[len(prefix):], (), None, visibility)


class CallEdge(NamedTuple):
    caller: FunctionNode
    callee: FunctionNode
    dispatch: str

    @property
    def is_inter_package(self) -> bool:
        return self.caller.package != self.callee.package


@dataclass(frozen=True)
class MethodSig:
    name: str
    args: tuple[TypeRef, ...] = ()
    ret: Optional[TypeRef] = None


@dataclass(frozen=True)
class Interface:
    ref: TypeRef
    methods: tuple[MethodSig, ...] = ()

    def method_node(self, m: MethodSig) -> FunctionNode:
        return FunctionNode(
            self.ref.registry, self.ref.package, self.ref.version, f"{self.ref.path}::{m.name}", m.args, m.ret
        )


@dataclass(frozen=True)
class Impl:
    interface: TypeRef
    type: TypeRef
    method: str
    function: FunctionNode


@dataclass(frozen=True)
class PackageCallGraph:
    owner: tuple[str, Version]
    nodes: frozenset
    edges: frozenset
    interfaces: tuple[Interface, ...] = ()
    impls: tuple[Impl, ...] = ()
    dropped: int = field(default=0, compare=False)

    @property
    def resolved(self) -> frozenset:
        return frozenset(n for n in self.nodes if n.is_resolved)

    @property
    def unresolved(self) -> frozenset:
        return frozenset(n for n in self.nodes if not n.is_resolved)

    def dispatch_counts(self) -> dict[str, int]:
        out = {k: 0 for k in DISPATCH_KINDS}
        for e in self.edges:
            out[e.dispatch] += 1
        return out


# --- raw (file-level) model -------------------------------------------------


@dataclass(frozen=True)
class RawTypeRef:
    package: Optional[str]
    path: str
    version: Optional[str] = None


@dataclass(frozen=True)
class RawFunction:
    id: int
    package: str
    path: str
    version: Optional[str] = None
    visibility: str = "public"
    args: tuple[RawTypeRef, ...] = ()
    ret: Optional[RawTypeRef] = None


@dataclass(frozen=True)
class RawMethod:
    name: str
    args: tuple[RawTypeRef, ...] = ()
    ret: Optional[RawTypeRef] = None


@dataclass(frozen=True)
class RawInterface:
    path: str
    methods: tuple[RawMethod, ...] = ()
    package: Optional[str] = None
    version: Optional[str] = None


@dataclass(frozen=True)
class RawImpl:
    interface: RawTypeRef
    type: RawTypeRef
    method: str
    function: int


@dataclass(frozen=True)
class RawCallGraph:
    package: str
    version: Optional[str]
    functions: tuple[RawFunction, ...] = ()
    edges: tuple[tuple[int, int, str], ...] = ()
    interfaces: tuple[RawInterface, ...] = ()
    impls: tuple[RawImpl, ...] = ()

    def dispatch_counts(self) -> dict[str, int]:
        out = {k: 0 for k in DISPATCH_KINDS}
        for _, _, d in self.edges:
            out[d] += 1
        return out


def _ref_from(obj, locus: str) -> Optional[RawTypeRef]:
    if obj is None:
        return None
    if isinstance(obj, str):
        return RawTypeRef(None, obj)
    if not isinstance(obj, dict) or "path" not in obj:
        raise CallGraphParseError("type-ref needs a 'path'", locus)
    return RawTypeRef(obj.get("package"), obj["path"], obj.get("version"))


def _ref_to(ref: Optional[RawTypeRef]):
    if ref is None:
        return None
    out = {"package": ref.package, "path": ref.path}
    if ref.version is not None:
        out["version"] = ref.version
    return out


def parse_callgraph(doc: Mapping, source: str = "") -> RawCallGraph:
    """Build a raw graph from an already decoded JSON document."""
    if not isinstance(doc, Mapping):
        raise CallGraphParseError("document is not an object", source=source)
    if "package" not in doc:
        raise CallGraphParseError("missing 'package'", source=source)
    funcs = []
    ids = set()
    for i, f in enumerate(doc.get("functions") or ()):
        locus = f"functions[{i}]"
        try:
            fid = int(f["id"])
            vis = f.get("visibility", "public")
            if vis not in ("public", "private"):
                raise CallGraphParseError(f"bad visibility {vis!r}", locus, source)
            raw = RawFunction(
                fid,
                f["package"],
                f["path"],
                f.get("version"),
                vis,
                tuple(_ref_from(a, f"{locus}.args[{j}]") for j, a in enumerate(f.get("args") or ())),
                _ref_from(f.get("ret"), f"{locus}.ret"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CallGraphParseError):
                raise
            raise CallGraphParseError(f"malformed function: {exc}", locus, source) from exc
        if fid in ids:
            raise CallGraphParseError(f"duplicate function id {fid}", locus, source)
        ids.add(fid)
        funcs.append(raw)
    edges = []
    for i, e in enumerate(doc.get("edges") or ()):
        locus = f"edges[{i}]"
        try:
            if isinstance(e, Mapping):
                caller, callee, dispatch = int(e["caller"]), int(e["callee"]), e.get("dispatch", "static")
            else:
                caller, callee, dispatch = int(e[0]), int(e[1]), e[2]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise CallGraphParseError(f"malformed edge: {exc}", locus, source) from exc
        if dispatch not in DISPATCH_KINDS:
            raise CallGraphParseError(f"unknown dispatch {dispatch!r}", locus, source)
        for end in (caller, callee):
            if end not in ids:
                raise CallGraphParseError(f"unknown function id {end}", locus, source)
        edges.append((caller, callee, dispatch))
    th = doc.get("type_hierarchy") or {}
    interfaces = []
    for i, it in enumerate(th.get("interfaces") or ()):
        locus = f"type_hierarchy.interfaces[{i}]"
        try:
            methods = tuple(
                RawMethod(
                    m["name"],
                    tuple(_ref_from(a, locus) for a in m.get("args") or ()),
                    _ref_from(m.get("ret"), locus),
                )
                for m in it.get("methods") or ()
            )
            interfaces.append(RawInterface(it["path"], methods, it.get("package"), it.get("version")))
        except (KeyError, TypeError) as exc:
            raise CallGraphParseError(f"malformed interface: {exc}", locus, source) from exc
    impls = []
    for i, im in enumerate(th.get("impls") or ()):
        locus = f"type_hierarchy.impls[{i}]"
        try:
            fid = int(im["function"])
            impls.append(RawImpl(_ref_from(im["interface"], locus), _ref_from(im["type"], locus), im["method"], fid))
        except (KeyError, TypeError, ValueError) as exc:
            raise CallGraphParseError(f"malformed impl: {exc}", locus, source) from exc
        if fid not in ids:
            raise CallGraphParseError(f"unknown function id {fid}", locus, source)
    return RawCallGraph(doc["package"], doc.get("version"), tuple(funcs), tuple(edges), tuple(interfaces), tuple(impls))


def load_callgraph(file: Union[str, os.PathLike, TextIO]) -> RawCallGraph:
    if isinstance(file, (str, os.PathLike)):
        source = os.fspath(file)
        with open(file, encoding="utf-8") as fh:
            text = fh.read()
    else:
        source = getattr(file, "name", "")
        text = file.read()
    if not text.strip():
        raise CallGraphParseError("empty file", source=str(source))
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CallGraphParseError(f"invalid JSON at line {exc.lineno}: {exc.msg}", source=str(source)) from exc
    return parse_callgraph(doc, str(source))


def callgraph_to_dict(raw: RawCallGraph) -> dict:
    return {
        "package": raw.package,
        "version": raw.version,
        "functions": [
            {
                "id": f.id,
                "package": f.package,
                "version": f.version,
                "path": f.path,
                "visibility": f.visibility,
                "args": [_ref_to(a) for a in f.args],
                "ret": _ref_to(f.ret),
            }
            for f in raw.functions
        ],
        "edges": [{"caller": a, "callee": b, "dispatch": d} for a, b, d in raw.edges],
        "type_hierarchy": {
            "interfaces": [
                {
                    "package": it.package,
                    "version": it.version,
                    "path": it.path,
                    "methods": [
                        {"name": m.name, "args": [_ref_to(a) for a in m.args], "ret": _ref_to(m.ret)}
                        for m in it.methods
                    ],
                }
                for it in raw.interfaces
            ],
            "impls": [
                {"interface": _ref_to(im.interface), "type": _ref_to(im.type), "method": im.method, "function": im.function}
                for im in raw.impls
            ],
        },
    }


def dump_callgraph(raw: RawCallGraph, fh: TextIO) -> None:
    json.dump(callgraph_to_dict(raw), fh, sort_keys=True, separators=(",", ":"))
    fh.write("\n")


# --- annotation ---------------------------------------------------------------


class _Annotator:
    def __init__(self, owner: Release, deps: Sequence[DependencySpec], registry: str):
        self.owner = owner
        self.registry = registry
        modes: dict[str, set] = {}
        for d in deps:
            modes.setdefault(d.name, set()).add(d.constraint.pinned if d.is_static else UNRESOLVED)
        self.versions: dict[str, VersionSlot] = {}
        for name, vs in modes.items():
            self.versions[name] = vs.pop() if len(vs) == 1 else UNRESOLVED

    def version_for(self, package: str, what: str) -> VersionSlot:
        if package == self.owner.name:
            return self.owner.version
        if package == EXTERN:
            return None
        if package in self.versions:
            return self.versions[package]
        raise DanglingReferenceError(f"{self.owner}: {what} references undeclared package {package!r}")

    def ref(self, r: Optional[RawTypeRef], what: str) -> Optional[TypeRef]:
        if r is None:
            return None
        if r.package is None or r.package in STD_PACKAGES:
            path = r.path if r.package is None else f"{r.package}::{r.path}"
            return TypeRef(self.registry, None, None, path)
        return TypeRef(self.registry, r.package, self.version_for(r.package, what), r.path)


def to_raw(graph: PackageCallGraph) -> RawCallGraph:
    """Serialize an annotated graph back into the file model (idempotent
    under :func:`annotate`)."""
    order = sorted(graph.nodes)
    ids = {n: i for i, n in enumerate(order)}

    def vtext(v):
        return str(v) if isinstance(v, Version) else None

    def rref(t: Optional[TypeRef]):
        if t is None:
            return None
        return RawTypeRef(t.package, t.path, vtext(t.version))

    funcs = tuple(
        RawFunction(ids[n], n.package, n.path, vtext(n.version), n.visibility, tuple(rref(a) for a in n.args), rref(n.ret))
        for n in order
    )
    edges = tuple(sorted((ids[e.caller], ids[e.callee], e.dispatch) for e in graph.edges))
    interfaces = tuple(
        RawInterface(
            it.ref.path,
            tuple(RawMethod(m.name, tuple(rref(a) for a in m.args), rref(m.ret)) for m in it.methods),
            it.ref.package,
            vtext(it.ref.version),
        )
        for it in graph.interfaces
    )
    impls = tuple(RawImpl(rref(im.interface), rref(im.type), im.method, ids[im.function]) for im in graph.impls)
    return RawCallGraph(graph.owner[0], str(graph.owner[1]), funcs, edges, interfaces, impls)


def annotate(
    raw: Union[RawCallGraph, PackageCallGraph],
    owner: Release,
    deps: Optional[Sequence[DependencySpec]] = None,
    registry: str = DEFAULT_REGISTRY,
) -> PackageCallGraph:
    """Give every function and type a registry/package/version qualifier.

    Local names take the owner's version, dependencies declared with an
    exact ``=x.y.z`` requirement take that version, and all other
    dependencies get the UNRESOLVED marker. Calls into the standard library
    are dropped. ``deps`` defaults to the owner's non-dev dependencies.
    """
    if isinstance(raw, PackageCallGraph):
        raw = to_raw(raw)
    if raw.package != owner.name:
        raise ValueError(f"call graph of {raw.package} annotated with release {owner}")
    if raw.version is not None:
        try:
            if parse_version(raw.version) != owner.version:
                raise ValueError(f"call graph of {raw.package} {raw.version} annotated with release {owner}")
        except SemverError as exc:
            raise CallGraphParseError(str(exc), "version") from exc
    if deps is None:
        deps = [d for d in owner.deps if d.kind != "dev"]
    ann = _Annotator(owner, deps, registry)

    by_id: dict[int, FunctionNode] = {}
    dropped = 0
    for f in raw.functions:
        if f.package in STD_PACKAGES:
            dropped += 1
            continue
        what = f"function {f.id} ({f.path})"
        by_id[f.id] = FunctionNode(
            registry,
            f.package,
            ann.version_for(f.package, what),
            f.path,
            tuple(ann.ref(a, what) for a in f.args),
            ann.ref(f.ret, what),
            f.visibility,
        )
    edges = set()
    for a, b, d in raw.edges:
        if a in by_id and b in by_id:
            edges.add(CallEdge(by_id[a], by_id[b], d))
    interfaces = []
    for it in raw.interfaces:
        pkg = it.package or owner.name
        if pkg in STD_PACKAGES:
            continue
        what = f"interface {it.path}"
        ref = TypeRef(registry, pkg, ann.version_for(pkg, what), it.path)
        methods = tuple(
            MethodSig(m.name, tuple(ann.ref(a, what) for a in m.args), ann.ref(m.ret, what)) for m in it.methods
        )
        interfaces.append(Interface(ref, methods))
    impls = []
    for im in raw.impls:
        if im.interface.package is None or im.interface.package in STD_PACKAGES or im.function not in by_id:
            continue
        what = f"impl of {im.interface.path}"
        impls.append(Impl(ann.ref(im.interface, what), ann.ref(im.type, what), im.method, by_id[im.function]))
    return PackageCallGraph(
        owner.key,
        frozenset(by_id.values()),
        frozenset(edges),
        tuple(interfaces),
        tuple(sorted(impls, key=lambda i: (i.interface.text, i.type.text, i.method, i.function.key))),
        dropped,
    )


class CallGraphStore:
    """Annotated call graphs keyed by release, loaded lazily.

    ``source`` is either a directory laid out as ``<package>/<version>.json``
    or a mapping ``(package, version) -> RawCallGraph``.
    """

    def __init__(self, index: Index, source: Union[str, os.PathLike, Mapping], registry: str = DEFAULT_REGISTRY):
        self.index = index
        self.registry = registry
        self._dir = None if isinstance(source, Mapping) else os.fspath(source)
        self._raw = dict(source) if isinstance(source, Mapping) else {}
        self._cache: dict[tuple[str, Version], PackageCallGraph] = {}

    def path_for(self, name: str, version: Version) -> str:
        return os.path.join(self._dir, name, f"{version}.json")

    def has(self, name: str, version: Version) -> bool:
        if (name, version) in self._cache or (name, version) in self._raw:
            return True
        return self._dir is not None and os.path.exists(self.path_for(name, version))

    def raw(self, name: str, version: Version) -> RawCallGraph:
        key = (name, version)
        if key in self._raw:
            return self._raw[key]
        if self._dir is not None:
            path = self.path_for(name, version)
            if os.path.exists(path):
                return load_callgraph(path)
        raise MissingCallGraphError(f"no call graph for {name} {version}")

    def get(self, name: str, version: Version) -> PackageCallGraph:
        key = (name, version)
        g = self._cache.get(key)
        if g is None:
            rel = self.index.get(name, version)
            if rel is None:
                raise MissingCallGraphError(f"{name} {version} is not in the index")
            g = annotate(self.raw(name, version), rel, registry=self.registry)
            self._cache[key] = g
        return g

    def __contains__(self, key) -> bool:
        return self.has(*key)

    def keys(self) -> Iterable[tuple[str, Version]]:
        if self._dir is None:
            return sorted(self._raw)
        out = []
        for name in sorted(os.listdir(self._dir)):
            pdir = os.path.join(self._dir, name)
            if not os.path.isdir(pdir):
                continue
            for fn in sorted(os.listdir(pdir)):
                if fn.endswith(".json"):
                    out.append((name, parse_version(fn[:-5])))
        return out
