import io
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnet.callgraph import load_callgraph
from cdnet.index import load_index, mirror_at, validate
from cdnet.resolver import resolve_tree
from cdnet.semver import parse_version
from cdnet.synth import (
    SynthError,
    SynthSpec,
    generate,
    matrix_closure,
    oracle_closure,
    oracle_max_nodes,
    oracle_resolve,
)

from scenarios import BUMP_T1, BUMP_T2, bump_index


def test_empty_spec():
    fx = generate(SynthSpec(packages=0))
    assert len(fx.index) == 0 and not fx.callgraphs


def test_seed_determinism():
    spec = SynthSpec(packages=15, seed=11, yank_prob=0.1, optional_prob=0.2)
    assert generate(spec).fingerprint() == generate(spec).fingerprint()
    assert generate(spec).fingerprint() != generate(SynthSpec(packages=15, seed=12)).fingerprint()


def test_hundred_packages_validate_clean():
    fx = generate(SynthSpec(packages=100, seed=5, callgraphs=False))
    assert validate(fx.index).is_clean


@pytest.mark.parametrize(
    "kw",
    [
        {"packages": 3, "fanout": (0, 4)},
        {"dynamic_prob": 1.5},
        {"yank_prob": -0.1},
        {"versions": (0, 2)},
        {"versions": (3, 2)},
        {"functions": (0, 0)},
        {"packages": -1},
        {"dispatch_mix": (0, 0, 0)},
        {"req_forms": (1, 2)},
    ],
)
def test_infeasible_specs(kw):
    with pytest.raises(SynthError):
        generate(SynthSpec(**kw))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_fixture_shape(seed):
    fx = generate(SynthSpec(packages=12, versions=(1, 5), seed=seed, yank_prob=0.1))
    assert validate(fx.index).is_clean
    for rs in fx.index.packages.values():
        stamps = [r.created_at for r in rs]
        assert stamps == sorted(stamps) and len(set(stamps)) == len(stamps)
    kinds = {d for raw in fx.callgraphs.values() for _, _, d in raw.edges}
    assert kinds == {"static", "dynamic", "macro"}
    assert set(fx.callgraphs) == {r.key for r in fx.index}


def test_written_fixture_round_trips(tmp_path):
    fx = generate(SynthSpec(packages=6, seed=9))
    paths = fx.write(str(tmp_path))
    assert load_index(paths["index"], paths["timestamps"]) == fx.index
    for (name, version), raw in fx.callgraphs.items():
        assert load_callgraph(tmp_path / "callgraphs" / name / f"{version}.json") == raw


def test_closure_examples():
    chain = {"a": ["b"], "b": ["c"]}
    assert oracle_closure(chain, "a") == {"b", "c"}
    assert oracle_closure({"a": ["a"]}, "a") == set()
    assert matrix_closure({"a": ["a"]}, "a") == set()


graphs = st.dictionaries(st.integers(0, 15), st.lists(st.integers(0, 15), max_size=4), max_size=16)


@given(graphs, st.integers(0, 15))
def test_closures_agree(g, start):
    assert oracle_closure(g, start) == matrix_closure(g, start)


def test_oracle_size_bound(monkeypatch):
    monkeypatch.setenv("CDNET_ORACLE_MAX_NODES", "3")
    assert oracle_max_nodes() == 3
    with pytest.raises(SynthError):
        oracle_closure({i: [i + 1] for i in range(5)}, 0)


def test_oracle_resolve_examples():
    idx = bump_index()
    for t in (BUMP_T1, BUMP_T2):
        a = idx.get("A", parse_version("1.0.0"))
        if a.created_at > t:
            continue
        assert oracle_resolve(idx, a, t) == resolve_tree(mirror_at(idx, t), a, t)
    b = idx.get("B", parse_version("1.1.0"))
    tree = oracle_resolve(idx, b, BUMP_T2)
    assert tree.nodes == {b.key}


def test_fixture_write_is_stable(tmp_path):
    fx = generate(SynthSpec(packages=5, seed=random.Random(3).randint(0, 99)))
    a, b = tmp_path / "a", tmp_path / "b"
    fx.write(str(a))
    fx.write(str(b))
    for rel in ("index.jsonl", "timestamps.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    assert io.StringIO(fx.index_text()).read() == (a / "index.jsonl").read_text()
