"""Versions, requirement strings and the matching rules used by the resolver.

The requirement grammar follows the registry's (cargo-style) syntax::

    req        := "" | comparator ("," comparator)*
    comparator := op? partial | wildcard
    op         := "=" | ">" | ">=" | "<" | "<=" | "~" | "^"
    partial    := MAJOR ["." MINOR ["." PATCH ["-" PRE]]]
    wildcard   := "*" | MAJOR ".*" | MAJOR "." MINOR ".*"

A comparator without an operator is a caret requirement. The empty
requirement matches every release. A pre-release version only matches when
some comparator names a pre-release on the same ``MAJOR.MINOR.PATCH``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from functools import total_ordering
from typing import Iterable, Optional, Sequence

__all__ = [
    "Version",
    "Comparator",
    "Constraint",
    "SemverError",
    "parse_version",
    "parse_constraint",
    "matches",
    "latest_matching",
    "compat_class",
]


class SemverError(ValueError):
    """Raised for malformed version or requirement text."""


_NUM = r"0|[1-9]\d*"
_IDENT = r"[0-9A-Za-z-]+"
_VERSION_RE = re.compile(
    rf"^(?P<major>{_NUM})\.(?P<minor>{_NUM})\.(?P<patch>{_NUM})"
    rf"(?:-(?P<pre>{_IDENT}(?:\.{_IDENT})*))?"
    rf"(?:\+(?P<build>{_IDENT}(?:\.{_IDENT})*))?$"
)


def _pre_key(pre: tuple[str, ...]):
    # A release (empty pre) sorts above every pre-release of the same triple.
    if not pre:
        return (1,)
    parts = []
    for ident in pre:
        if ident.isdigit():
            parts.append((0, int(ident), ""))
        else:
            parts.append((1, 0, ident))
    return (0, tuple(parts))


@total_ordering
@dataclass(frozen=True)
class Version:
    major: int
    minor: int
    patch: int
    pre: tuple[str, ...] = ()
    build: str = field(default="", compare=False)

    def _key(self):
        return (self.major, self.minor, self.patch, _pre_key(self.pre))

    def __eq__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        return self._key() == other._key()

    def __lt__(self, other):
        if not isinstance(other, Version):
            return NotImplemented
        return self._key() < other._key()

    def __hash__(self):
        return hash((self.major, self.minor, self.patch, self.pre))

    def __str__(self):
        text = f"{self.major}.{self.minor}.{self.patch}"
        if self.pre:
            text += "-" + ".".join(self.pre)
        if self.build:
            text += "+" + self.build
        return text

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.major, self.minor, self.patch)

    @property
    def is_prerelease(self) -> bool:
        return bool(self.pre)


def parse_version(text: str) -> Version:
    """Parse a strict ``MAJOR.MINOR.PATCH[-PRE][+BUILD]`` version."""
    m = _VERSION_RE.match(text.strip())
    if not m:
        raise SemverError(f"invalid version: {text!r}")
    pre = tuple(m.group("pre").split(".")) if m.group("pre") else ()
    for ident in pre:
        if ident.isdigit() and len(ident) > 1 and ident[0] == "0":
            raise SemverError(f"invalid version: {text!r} (leading zero in pre-release)")
    return Version(
        int(m.group("major")),
        int(m.group("minor")),
        int(m.group("patch")),
        pre,
        m.group("build") or "",
    )


def _pre_ge(a: tuple[str, ...], b: tuple[str, ...]) -> bool:
    return _pre_key(a) >= _pre_key(b)


def _pre_gt(a: tuple[str, ...], b: tuple[str, ...]) -> bool:
    return _pre_key(a) > _pre_key(b)


def _pre_lt(a: tuple[str, ...], b: tuple[str, ...]) -> bool:
    return _pre_key(a) < _pre_key(b)


@dataclass(frozen=True)
class Comparator:
    """One comparator of a requirement; ``minor``/``patch`` may be omitted."""

    op: str  # one of = > >= < <= ~ ^ *
    major: int = 0
    minor: Optional[int] = None
    patch: Optional[int] = None
    pre: tuple[str, ...] = ()

    def __str__(self):
        if self.op == "*":
            if self.minor is None and self.major < 0:
                return "*"
            parts = [str(self.major)]
            if self.minor is not None:
                parts.append(str(self.minor))
            return ".".join(parts) + ".*"
        text = str(self.major)
        if self.minor is not None:
            text += f".{self.minor}"
            if self.patch is not None:
                text += f".{self.patch}"
                if self.pre:
                    text += "-" + ".".join(self.pre)
        return f"{self.op}{text}"

    @property
    def is_exact(self) -> bool:
        """True for ``=MAJOR.MINOR.PATCH``, the only single-version form."""
        return self.op == "=" and self.patch is not None

    def matches(self, v: Version) -> bool:
        op = self.op
        if op == "=":
            return self._exact(v)
        if op == ">":
            return self._greater(v)
        if op == ">=":
            return self._exact(v) or self._greater(v)
        if op == "<":
            return self._less(v)
        if op == "<=":
            return self._exact(v) or self._less(v)
        if op == "~":
            return self._tilde(v)
        if op == "^":
            return self._caret(v)
        if op == "*":
            if self.major < 0:
                return True
            if v.major != self.major:
                return False
            return self.minor is None or v.minor == self.minor
        raise AssertionError(op)

    def _exact(self, v: Version) -> bool:
        if v.major != self.major:
            return False
        if self.minor is not None and v.minor != self.minor:
            return False
        if self.patch is not None and v.patch != self.patch:
            return False
        return v.pre == self.pre

    def _greater(self, v: Version) -> bool:
        if v.major != self.major:
            return v.major > self.major
        if self.minor is None:
            return False
        if v.minor != self.minor:
            return v.minor > self.minor
        if self.patch is None:
            return False
        if v.patch != self.patch:
            return v.patch > self.patch
        return _pre_gt(v.pre, self.pre)

    def _less(self, v: Version) -> bool:
        if v.major != self.major:
            return v.major < self.major
        if self.minor is None:
            return False
        if v.minor != self.minor:
            return v.minor < self.minor
        if self.patch is None:
            return False
        if v.patch != self.patch:
            return v.patch < self.patch
        return _pre_lt(v.pre, self.pre)

    def _tilde(self, v: Version) -> bool:
        if v.major != self.major:
            return False
        if self.minor is not None and v.minor != self.minor:
            return False
        if self.patch is not None and v.patch != self.patch:
            return v.patch > self.patch
        return _pre_ge(v.pre, self.pre)

    def _caret(self, v: Version) -> bool:
        if v.major != self.major:
            return False
        if self.minor is None:
            return True
        if self.patch is None:
            if self.major > 0:
                return v.minor >= self.minor
            return v.minor == self.minor
        if self.major > 0:
            if v.minor != self.minor:
                return v.minor > self.minor
            if v.patch != self.patch:
                return v.patch > self.patch
        elif self.minor > 0:
            if v.minor != self.minor:
                return False
            if v.patch != self.patch:
                return v.patch > self.patch
        elif v.minor != self.minor or v.patch != self.patch:
            return False
        return _pre_ge(v.pre, self.pre)

    def admits_prerelease_of(self, v: Version) -> bool:
        return (
            bool(self.pre)
            and self.major == v.major
            and self.minor == v.minor
            and self.patch == v.patch
        )


@dataclass(frozen=True)
class Constraint:
    """A conjunction of comparators. Empty means "any release"."""

    comparators: tuple[Comparator, ...] = ()

    def __str__(self):
        return ", ".join(str(c) for c in self.comparators)

    def __contains__(self, v: Version) -> bool:
        return matches(self, v)

    @property
    def is_static(self) -> bool:
        """A single immutable version (``=1.2.3``)."""
        return len(self.comparators) == 1 and self.comparators[0].is_exact

    @property
    def pinned(self) -> Optional[Version]:
        if not self.is_static:
            return None
        c = self.comparators[0]
        return Version(c.major, c.minor, c.patch, c.pre)


_COMP_RE = re.compile(
    r"^(?P<op>>=|<=|>|<|=|~|\^)?\s*"
    r"(?P<major>\d+|\*|x|X)"
    r"(?:\.(?P<minor>\d+|\*|x|X))?"
    r"(?:\.(?P<patch>\d+|\*|x|X))?"
    rf"(?:-(?P<pre>{_IDENT}(?:\.{_IDENT})*))?"
    rf"(?:\+{_IDENT}(?:\.{_IDENT})*)?$"
)
_WILD = {"*", "x", "X"}


def _parse_comparator(text: str, whole: str) -> Comparator:
    m = _COMP_RE.match(text)
    if not m:
        raise SemverError(f"invalid requirement {whole!r}: bad comparator {text!r}")
    op = m.group("op")
    parts = [m.group("major"), m.group("minor"), m.group("patch")]
    pre = tuple(m.group("pre").split(".")) if m.group("pre") else ()
    nums: list[Optional[int]] = []
    wildcard = False
    for p in parts:
        if p is None:
            nums.append(None)
        elif p in _WILD:
            wildcard = True
            nums.append(None)
        else:
            if wildcard:
                raise SemverError(f"invalid requirement {whole!r}: number after wildcard")
            if len(p) > 1 and p[0] == "0":
                raise SemverError(f"invalid requirement {whole!r}: leading zero")
            nums.append(int(p))
    major, minor, patch = nums
    if pre and patch is None:
        raise SemverError(f"invalid requirement {whole!r}: pre-release needs a full version")
    if wildcard:
        if op not in (None, "="):
            raise SemverError(f"invalid requirement {whole!r}: operator with wildcard")
        if major is None:
            return Comparator("*", -1)
        return Comparator("*", major, minor)
    return Comparator(op or "^", major, minor, patch, pre)


def parse_constraint(text: str) -> Constraint:
    """Parse a comma-separated requirement string."""
    stripped = text.strip()
    if not stripped:
        return Constraint(())
    pieces = [p.strip() for p in stripped.split(",")]
    if any(not p for p in pieces):
        raise SemverError(f"invalid requirement {text!r}: empty comparator")
    comps = []
    for p in pieces:
        c = _parse_comparator(p, text)
        if c.op == "*" and c.major < 0:
            # "*" alone adds nothing to a conjunction
            if len(pieces) == 1:
                return Constraint((c,))
            continue
        comps.append(c)
    return Constraint(tuple(comps))


def matches(constraint: Constraint, version: Version) -> bool:
    for c in constraint.comparators:
        if not c.matches(version):
            return False
    if not version.pre:
        return True
    return any(c.admits_prerelease_of(version) for c in constraint.comparators)


def latest_matching(
    candidates: Iterable[tuple[Version, Optional[datetime], bool]],
    constraint: Constraint,
    t: Optional[datetime] = None,
) -> Optional[Version]:
    """Highest non-yanked candidate created at or before ``t`` that satisfies
    ``constraint``. Candidates are ``(version, created_at, yanked)`` triples;
    ``t=None`` disables the time filter."""
    best = None
    for version, created, yanked in candidates:
        if yanked:
            continue
        if t is not None and created is not None and created > t:
            continue
        if best is not None and version <= best:
            continue
        if matches(constraint, version):
            best = version
    return best


def compat_class(version: Version) -> tuple[int, ...]:
    """Key shared by caret-compatible versions."""
    if version.major > 0:
        return (version.major,)
    if version.minor > 0:
        return (0, version.minor)
    return (0, 0, version.patch)


def sort_versions(versions: Sequence[Version]) -> list[Version]:
    return sorted(versions)
