"""Registry index: releases, their dependency manifests and publication times.

On-disk formats
---------------
Index file (UTF-8, one JSON object per line, ``#`` lines and blank lines
ignored)::

    {"name": "nom", "vers": "3.2.1", "yanked": false,
     "features": {"default": ["std"], "std": [], "regexp": ["regex"]},
     "deps": [{"name": "regex", "req": "^0.2", "kind": "normal",
               "optional": true, "features": [], "default_features": true,
               "target": null}]}

``kind`` is ``normal`` (or null), ``dev`` or ``build``. ``features`` on a
dependency lists features to switch on in that dependency. The release-level
``features`` map names each feature and what it turns on: other features,
optional dependencies (``"dep"`` or ``"dep:dep"``) or a dependency's
feature (``"dep/feat"``). Every optional dependency is also an implicit
feature of the same name.

Timestamp file: CSV rows ``name,version,ISO-8601 timestamp``.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from types import MappingProxyType
from typing import Callable, Iterable, Iterator, Mapping, Optional, TextIO, Union

from .semver import Constraint, SemverError, Version, matches, parse_constraint, parse_version

__all__ = [
    "DependencySpec",
    "Release",
    "Index",
    "ValidationReport",
    "IndexParseError",
    "DuplicateReleaseError",
    "MissingTimestampError",
    "UnknownFeatureError",
    "load_index",
    "load_timestamps",
    "dump_index",
    "dump_timestamps",
    "validate",
    "mirror_at",
    "runtime_deps",
    "parse_timestamp",
]

DEP_KINDS = ("normal", "dev", "build")

Source = Union[str, os.PathLike, TextIO, Iterable[str]]
ReleaseKey = tuple[str, Version]


class IndexParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "index"):
        self.line = line
        loc = f"{source} line {line}: " if line is not None else f"{source}: "
        super().__init__(loc + message)


class DuplicateReleaseError(ValueError):
    pass


class MissingTimestampError(ValueError):
    pass


class UnknownFeatureError(KeyError):
    def __init__(self, release: str, feature: str):
        self.feature = feature
        super().__init__(f"{release} has no feature {feature!r}")

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class DependencySpec:
    name: str
    req: str
    kind: str = "normal"
    optional: bool = False
    features: tuple[str, ...] = ()
    default_features: bool = True
    target: Optional[str] = None
    enabled_by: tuple[str, ...] = ()
    constraint: Constraint = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in DEP_KINDS:
            raise ValueError(f"dependency {self.name}: unknown kind {self.kind!r}")
        if self.constraint is None:
            object.__setattr__(self, "constraint", parse_constraint(self.req))

    @property
    def is_static(self) -> bool:
        return self.constraint.is_static


@dataclass(frozen=True)
class Release:
    name: str
    version: Version
    created_at: datetime
    deps: tuple[DependencySpec, ...] = ()
    yanked: bool = False
    features: Mapping[str, tuple[str, ...]] = field(default_factory=dict, compare=False)

    @property
    def key(self) -> ReleaseKey:
        return (self.name, self.version)

    @property
    def default_features(self) -> tuple[str, ...]:
        return tuple(self.features.get("default", ()))

    @property
    def known_features(self) -> frozenset[str]:
        names = set(self.features)
        names.update(d.name for d in self.deps if d.optional)
        return frozenset(names)

    def __str__(self):
        return f"{self.name} {self.version}"

    def __hash__(self):
        return hash(self.key)


def _enabling_features(name: str, features: Mapping[str, Iterable[str]]) -> tuple[str, ...]:
    found = {name}
    for feat, items in features.items():
        for item in items:
            head = item[4:] if item.startswith("dep:") else item.split("/", 1)[0]
            if head.endswith("?"):
                head = head[:-1]
            if head == name:
                found.add(feat)
    return tuple(sorted(found))


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


class Index:
    """Immutable map ``package -> releases`` sorted by version precedence."""

    def __init__(self, releases: Iterable[Release] = ()):
        by_name: dict[str, dict[Version, Release]] = {}
        for r in releases:
            slot = by_name.setdefault(r.name, {})
            if r.version in slot:
                raise DuplicateReleaseError(f"duplicate release {r.name} {r.version}")
            slot[r.version] = r
        self._packages = MappingProxyType(
            {name: tuple(sorted(vs.values(), key=lambda r: r.version)) for name, vs in sorted(by_name.items())}
        )
        self._lookup = {(r.name, r.version): r for rs in self._packages.values() for r in rs}

    @property
    def packages(self) -> Mapping[str, tuple[Release, ...]]:
        return self._packages

    def __len__(self):
        return len(self._lookup)

    def __iter__(self) -> Iterator[Release]:
        for rs in self._packages.values():
            yield from rs

    def __contains__(self, key) -> bool:
        if isinstance(key, Release):
            key = key.key
        return key in self._lookup

    def __eq__(self, other):
        if not isinstance(other, Index):
            return NotImplemented
        return self._lookup == other._lookup

    def get(self, name: str, version: Version) -> Optional[Release]:
        return self._lookup.get((name, version))

    def releases_of(self, name: str) -> tuple[Release, ...]:
        return self._packages.get(name, ())

    def filter(self, keep: Callable[[Release], bool]) -> "Index":
        return Index(r for r in self if keep(r))

    def latest_published(self, name: str, exclude: frozenset = frozenset()) -> Optional[Release]:
        """Most recently created usable release; ties go to the higher version."""
        best = None
        for r in self.releases_of(name):
            if r.yanked or r.key in exclude:
                continue
            if best is None or (r.created_at, r.version) > (best.created_at, best.version):
                best = r
        return best

    @property
    def max_timestamp(self) -> Optional[datetime]:
        return max((r.created_at for r in self), default=None)

    @property
    def min_timestamp(self) -> Optional[datetime]:
        return min((r.created_at for r in self), default=None)


def _lines(source: Source) -> Iterator[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def load_timestamps(source: Source) -> dict[ReleaseKey, datetime]:
    out: dict[ReleaseKey, datetime] = {}
    for lineno, row in enumerate(csv.reader(_lines(source)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 3:
            raise IndexParseError(f"expected 3 fields, got {len(row)}", lineno, "timestamps")
        name, vers, ts = (c.strip() for c in row)
        try:
            key = (name, parse_version(vers))
            out[key] = parse_timestamp(ts)
        except ValueError as exc:
            raise IndexParseError(str(exc), lineno, "timestamps") from exc
    return out


def _parse_record(obj: dict, lineno: int) -> tuple[str, Version, tuple[DependencySpec, ...], bool, dict]:
    if not isinstance(obj, dict):
        raise IndexParseError("record is not an object", lineno)
    try:
        name = obj["name"]
        version = parse_version(obj["vers"])
    except KeyError as exc:
        raise IndexParseError(f"missing field {exc.args[0]!r}", lineno) from exc
    except SemverError as exc:
        raise IndexParseError(str(exc), lineno) from exc
    features = {str(k): tuple(v) for k, v in (obj.get("features") or {}).items()}
    deps = []
    for d in obj.get("deps") or ():
        try:
            optional = bool(d.get("optional", False))
            deps.append(
                DependencySpec(
                    name=d["name"],
                    req=d.get("req", ""),
                    kind=d.get("kind") or "normal",
                    optional=optional,
                    features=tuple(d.get("features") or ()),
                    default_features=bool(d.get("default_features", True)),
                    target=d.get("target"),
                    enabled_by=_enabling_features(d["name"], features) if optional else (),
                )
            )
        except KeyError as exc:
            raise IndexParseError(f"dependency missing field {exc.args[0]!r}", lineno) from exc
        except (SemverError, ValueError) as exc:
            raise IndexParseError(str(exc), lineno) from exc
    return name, version, tuple(deps), bool(obj.get("yanked", False)), features


def load_index(index_source: Source, timestamp_source: Source) -> Index:
    """Parse an index file and attach creation timestamps to every release."""
    stamps = load_timestamps(timestamp_source)
    releases = []
    seen: set[ReleaseKey] = set()
    for lineno, line in enumerate(_lines(index_source), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IndexParseError(f"invalid JSON: {exc.msg}", lineno) from exc
        name, version, deps, yanked, features = _parse_record(obj, lineno)
        key = (name, version)
        if key in seen:
            raise DuplicateReleaseError(f"index line {lineno}: duplicate release {name} {version}")
        seen.add(key)
        if key not in stamps:
            raise MissingTimestampError(f"index line {lineno}: no timestamp for {name} {version}")
        releases.append(Release(name, version, stamps[key], deps, yanked, MappingProxyType(features)))
    return Index(releases)


def _release_record(r: Release) -> dict:
    deps = []
    for d in r.deps:
        deps.append(
            {
                "name": d.name,
                "req": d.req,
                "kind": d.kind,
                "optional": d.optional,
                "features": list(d.features),
                "default_features": d.default_features,
                "target": d.target,
            }
        )
    return {
        "name": r.name,
        "vers": str(r.version),
        "deps": deps,
        "features": {k: list(v) for k, v in r.features.items()},
        "yanked": r.yanked,
    }


def dump_index(index: Index, fh: TextIO) -> None:
    for r in index:
        fh.write(json.dumps(_release_record(r), sort_keys=True) + "\n")


def dump_timestamps(index: Index, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    for r in index:
        w.writerow([r.name, str(r.version), _format_timestamp(r.created_at)])


def index_from_text(index_text: str, timestamp_text: str) -> Index:
    return load_index(io.StringIO(index_text), io.StringIO(timestamp_text))


@dataclass(frozen=True)
class ValidationReport:
    unknown: tuple[tuple[ReleaseKey, str], ...] = ()
    unsolvable: tuple[tuple[ReleaseKey, str, str], ...] = ()

    @property
    def flagged(self) -> frozenset[ReleaseKey]:
        return frozenset([k for k, _ in self.unknown] + [k for k, _, _ in self.unsolvable])

    @property
    def is_clean(self) -> bool:
        return not self.unknown and not self.unsolvable

    def __bool__(self):
        return not self.is_clean

    def rows(self) -> list[tuple[str, str, str, str, str]]:
        out = [(name, str(v), "unknown-dependency", dep, "") for (name, v), dep in self.unknown]
        out += [(name, str(v), "unsolvable-constraint", dep, req) for (name, v), dep, req in self.unsolvable]
        return out


def validate(index: Index) -> ValidationReport:
    """Flag releases whose dependencies name unknown packages or can never be
    satisfied by any published version."""
    unknown = []
    unsolvable = []
    versions = {name: [r.version for r in rs] for name, rs in index.packages.items()}
    cache: dict[tuple[str, str], bool] = {}
    for r in index:
        for d in r.deps:
            if d.name not in versions:
                unknown.append((r.key, d.name))
                continue
            ck = (d.name, d.req)
            if ck not in cache:
                cache[ck] = any(matches(d.constraint, v) for v in versions[d.name])
            if not cache[ck]:
                unsolvable.append((r.key, d.name, d.req))
    return ValidationReport(tuple(unknown), tuple(unsolvable))


def mirror_at(index: Index, t: datetime) -> Index:
    """Releases created at or before ``t``."""
    return index.filter(lambda r: r.created_at <= t)


def enabled_feature_closure(release: Release, enabled: Iterable[str]) -> frozenset[str]:
    known = release.known_features
    todo = list(enabled)
    on: set[str] = set()
    while todo:
        f = todo.pop()
        if f in on:
            continue
        if f not in known:
            raise UnknownFeatureError(str(release), f)
        on.add(f)
        for item in release.features.get(f, ()):
            if item.startswith("dep:") or "/" in item:
                continue
            todo.append(item)
    return frozenset(on)


def runtime_deps(release: Release, enabled_features: Iterable[str] = ()) -> list[DependencySpec]:
    """Dependencies compiled into the library: normal ones (platform-specific
    included) plus optional ones switched on by ``enabled_features``.

    Features a parent turns on in a dependency through ``"dep/feat"`` entries
    are merged into the returned spec's ``features``.
    """
    on = enabled_feature_closure(release, enabled_features)
    extra: dict[str, set[str]] = {}
    activated: set[str] = set()
    for f in on:
        for item in release.features.get(f, ()):
            if item.startswith("dep:"):
                activated.add(item[4:])
            elif "/" in item:
                dep, feat = item.split("/", 1)
                weak = dep.endswith("?")
                dep = dep.rstrip("?")
                extra.setdefault(dep, set()).add(feat)
                if not weak:
                    activated.add(dep)
    out = []
    for d in release.deps:
        if d.kind != "normal":
            continue
        if d.optional and not (activated & {d.name} or on.intersection(d.enabled_by)):
            continue
        if d.name in extra and not extra[d.name] <= set(d.features):
            d = DependencySpec(
                d.name, d.req, d.kind, d.optional, tuple(sorted(set(d.features) | extra[d.name])),
                d.default_features, d.target, d.enabled_by, d.constraint,
            )
        out.append(d)
    return out
