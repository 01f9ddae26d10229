from datetime import datetime, timedelta, timezone
from functools import cmp_to_key

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnet.semver import (
    SemverError,
    compat_class,
    latest_matching,
    matches,
    parse_constraint,
    parse_version,
)

V = parse_version


# Independent precedence check written straight from the SemVer 2.0.0 rules,
# operating on the raw text.
def ref_cmp(a: str, b: str) -> int:
    def split(s):
        s = s.split("+", 1)[0]
        core, _, pre = s.partition("-")
        return [int(x) for x in core.split(".")], (pre.split(".") if pre else [])

    (ca, pa), (cb, pb) = split(a), split(b)
    if ca != cb:
        return -1 if ca < cb else 1
    if not pa or not pb:
        return (len(pb) > 0) - (len(pa) > 0) if (pa or pb) else 0
    for x, y in zip(pa, pb):
        if x == y:
            continue
        xd, yd = x.isdigit(), y.isdigit()
        if xd and yd:
            return -1 if int(x) < int(y) else 1
        if xd != yd:
            return -1 if xd else 1
        return -1 if x < y else 1
    return (len(pa) > len(pb)) - (len(pa) < len(pb))


ident = st.one_of(st.integers(0, 30).map(str), st.sampled_from(["alpha", "beta", "rc", "a1", "x-y"]))
version_text = st.builds(
    lambda M, m, p, pre, build: f"{M}.{m}.{p}" + ("-" + ".".join(pre) if pre else "") + ("+" + build if build else ""),
    st.integers(0, 4), st.integers(0, 4), st.integers(0, 4),
    st.lists(ident, max_size=3),
    st.sampled_from(["", "b1", "sha.5"]),
)


def test_parse_examples():
    assert V("1.0.0").triple == (1, 0, 0)
    assert V("0.0.0").triple == (0, 0, 0)
    assert V("1.2.3-alpha.1") < V("1.2.3")


@pytest.mark.parametrize("bad", ["", "1", "1.2", "01.2.3", "1.2.3-", "a.b.c", "1.2.3.4", "-1.0.0"])
def test_malformed_versions(bad):
    with pytest.raises(SemverError):
        parse_version(bad)


def test_build_metadata_ignored():
    assert V("1.0.0+abc") == V("1.0.0")
    assert not V("1.0.0+abc") < V("1.0.0+zzz")


@given(version_text, version_text)
def test_precedence_matches_reference(a, b):
    r = ref_cmp(a, b)
    va, vb = V(a), V(b)
    assert (va < vb) == (r < 0)
    assert (va == vb) == (r == 0)


@given(st.lists(version_text, min_size=1, max_size=12))
def test_precedence_is_total_order(texts):
    vs = [V(t) for t in texts]
    ordered = sorted(vs)
    ref = sorted(texts, key=cmp_to_key(ref_cmp))
    assert [ref_cmp(str(a), str(b)) <= 0 for a, b in zip(ordered, ordered[1:])] == [True] * (len(vs) - 1)
    assert [V(t) for t in ref] == ordered
    for a in vs:
        for b in vs:
            assert (a < b) + (b < a) + (a == b) == 1


def test_constraint_examples():
    c = parse_constraint("1.*")
    assert matches(c, V("1.8.0")) and matches(c, V("1.0.0")) and matches(c, V("1.20.2"))
    assert not matches(c, V("2.0.0"))
    r = parse_constraint(">1.0.0, <=2.0.0")
    assert len(r.comparators) == 2
    assert not matches(r, V("1.0.0")) and matches(r, V("2.0.0"))
    assert not matches(parse_constraint("^0.4.0"), V("0.5.0"))


# Table of caret / tilde / wildcard semantics as documented for the registry's
# resolver, written out by hand.
REFERENCE = [
    ("^1.2.3", ["1.2.3", "1.9.0"], ["1.2.2", "2.0.0"]),
    ("^0.2.3", ["0.2.3", "0.2.9"], ["0.3.0", "0.2.2"]),
    ("^0.0.3", ["0.0.3"], ["0.0.4", "0.1.0"]),
    ("^0.0", ["0.0.0", "0.0.7"], ["0.1.0"]),
    ("^0", ["0.0.0", "0.9.9"], ["1.0.0"]),
    ("~1.2.3", ["1.2.3", "1.2.9"], ["1.3.0"]),
    ("~1.2", ["1.2.0", "1.2.9"], ["1.3.0"]),
    ("~1", ["1.0.0", "1.9.9"], ["2.0.0"]),
    ("1.2.*", ["1.2.0", "1.2.5"], ["1.3.0"]),
    ("*", ["0.0.1", "9.9.9"], []),
    ("=1.2.3", ["1.2.3"], ["1.2.4"]),
    ("1.2.3", ["1.2.3", "1.4.0"], ["2.0.0", "1.2.2"]),
    (">=1.2, <1.5", ["1.2.0", "1.4.9"], ["1.5.0", "1.1.9"]),
    ("<1.2.3", ["1.2.2", "0.1.0"], ["1.2.3"]),
]


@pytest.mark.parametrize("req, yes, no", REFERENCE)
def test_reference_semantics(req, yes, no):
    c = parse_constraint(req)
    assert all(matches(c, V(v)) for v in yes)
    assert not any(matches(c, V(v)) for v in no)


def test_empty_requirement_is_any():
    c = parse_constraint("")
    assert all(matches(c, V(v)) for v in ("0.0.1", "0.4.0", "3.0.0"))


def test_prerelease_needs_same_triple():
    assert not matches(parse_constraint("^1.0.0"), V("1.2.0-beta"))
    assert matches(parse_constraint("^1.2.0-alpha"), V("1.2.0-beta"))
    assert not matches(parse_constraint("^1.2.0-alpha"), V("1.3.0-beta"))
    assert matches(parse_constraint("^1.2.0-alpha"), V("1.3.0"))


@pytest.mark.parametrize("bad", ["^", ">=x", "1.*.3", ">= 1.0.0,", "~>1.0", "^1.2.3.4"])
def test_malformed_constraints(bad):
    with pytest.raises(SemverError):
        parse_constraint(bad)


@given(st.sampled_from([r for r, _, _ in REFERENCE] + ["^0.4.0", "1.*", "0.*"]))
def test_constraint_text_round_trip(req):
    c = parse_constraint(req)
    assert parse_constraint(str(c)) == c


def test_compat_class_examples():
    assert compat_class(V("1.2.0")) == compat_class(V("1.9.9"))
    assert compat_class(V("0.4.4")) != compat_class(V("0.5.5"))
    assert compat_class(V("0.0.1")) != compat_class(V("0.0.2"))


@given(version_text)
def test_caret_on_own_version_equals_compat_class(text):
    v = V(text.split("-")[0].split("+")[0])
    c = parse_constraint(f"^{v}")
    for other in ("0.0.0", "0.0.1", "0.1.0", "0.1.5", "1.0.0", "1.3.0", "2.0.0", "3.1.4", "4.4.4"):
        o = V(other)
        if o >= v:
            assert matches(c, o) == (compat_class(o) == compat_class(v))


T0 = datetime(2020, 1, 1, tzinfo=timezone.utc)


def test_latest_matching_examples():
    t1, t2 = T0, T0 + timedelta(days=10)
    cands = [(V("1.1.0"), t1, False), (V("1.2.0"), t2, False)]
    c = parse_constraint("1.*")
    assert latest_matching(cands, c, t1 + timedelta(days=1)) == V("1.1.0")
    assert latest_matching(cands, c, t2 + timedelta(days=1)) == V("1.2.0")
    assert latest_matching(cands, parse_constraint("2.*"), t2) is None
    assert latest_matching([(V("1.2.0"), t1, True)], c, t2) is None


candidate = st.tuples(version_text, st.integers(0, 20), st.booleans())


@settings(max_examples=200)
@given(st.lists(candidate, max_size=10), st.sampled_from(["*", "1.*", "^0.2", "~1.1", ">=1.0.0, <3.0.0", "=2.2.2"]), st.integers(0, 20))
def test_latest_matching_exhaustive(raw, req, day):
    cands = [(V(v), T0 + timedelta(days=d), y) for v, d, y in raw]
    c = parse_constraint(req)
    t = T0 + timedelta(days=day)
    got = latest_matching(cands, c, t)
    ok = [v for v, d, y in cands if not y and d <= t and matches(c, v)]
    assert got == (max(ok) if ok else None)


@given(st.lists(candidate, max_size=10), st.integers(0, 20), st.integers(0, 20))
def test_latest_matching_monotone_in_time(raw, d1, d2):
    d1, d2 = sorted((d1, d2))
    cands = [(V(v), T0 + timedelta(days=d), y) for v, d, y in raw]
    c = parse_constraint("*")
    a = latest_matching(cands, c, T0 + timedelta(days=d1))
    b = latest_matching(cands, c, T0 + timedelta(days=d2))
    assert a is None or (b is not None and b >= a)
