import csv
import json
import os

import pytest

from cdnet.callgraph import CallGraphStore
from cdnet.cli import (
    EXIT_INVALID,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_UNRESOLVABLE,
    EXIT_USAGE,
    analyze_snapshot,
    main,
    parse_duration,
)
from cdnet.index import load_index, validate
from cdnet.metrics import (
    CallView,
    MetadataView,
    call_summary,
    dependency_counts,
    function_reach_all,
    reach,
)
from cdnet.resolver import changed_fraction
from cdnet.serialize import snapshot_dirname
from cdnet.synth import SynthSpec, generate
from cdnet.unify import build_snapshot

from scenarios import CHAIN_T, BUMP_T1, dep, chain_graphs, chain_index, bump_index, make_index, ts, write_fixture

AT = CHAIN_T.isoformat()


def _args(paths, *extra, store=True):
    out = ["--index", paths["index"], "--timestamps", paths["timestamps"]]
    if store:
        out += ["--cg-store", paths["cg_store"]]
    return out + list(extra)


def _tsv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh, delimiter="\t"))


@pytest.fixture
def chain_paths(tmp_path):
    return write_fixture(tmp_path / "fx", chain_index(), chain_graphs())


def test_parse_duration():
    assert parse_duration("30d").days == 30 and parse_duration("1w").days == 7


def test_validate_clean(chain_paths, tmp_path):
    out = str(tmp_path / "v.tsv")
    assert main(["validate", *_args(chain_paths, "--out", out, store=False)]) == EXIT_OK
    assert _tsv(out) == [["name", "version", "problem", "dependency", "requirement"]]


def test_validate_unknown_dependency(tmp_path):
    idx = make_index([("a", "1.0.0", ts(1), [dep("ghost", "1")])])
    paths = write_fixture(tmp_path / "fx", idx)
    out = str(tmp_path / "v.tsv")
    assert main(["validate", *_args(paths, "--out", out, store=False)]) == EXIT_OK
    assert _tsv(out)[1] == ["a", "1.0.0", "unknown-dependency", "ghost", ""]
    assert main(["validate", *_args(paths, "--strict", store=False)]) == EXIT_INVALID


def test_validate_report_equals_library(tmp_path):
    fx = generate(SynthSpec(packages=40, versions=(1, 5), seed=3, callgraphs=False))
    paths = fx.write(str(tmp_path / "fx"))
    # break a few releases so the report is not empty
    with open(paths["index"], encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines[-1] = lines[-1].replace('"deps": []', '"deps": [{"name": "ghost", "req": "1"}]')
    lines[-2] = lines[-2].replace('"deps": [{', '"deps": [{"name": "p000", "req": ">=99.0.0"}, {', 1)
    with open(paths["index"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    out = str(tmp_path / "v.tsv")
    assert main(["validate", *_args(paths, "--out", out, store=False)]) == EXIT_OK
    lib = validate(load_index(paths["index"], paths["timestamps"]))
    assert _tsv(out)[1:] == [list(map(str, r)) for r in lib.rows()]
    assert len(lib.rows()) >= 1


def test_build_chain(chain_paths, tmp_path):
    out = tmp_path / "out"
    assert main(["build", *_args(chain_paths, "--at", AT, "--out", str(out))]) == EXIT_OK
    snap = out / snapshot_dirname(CHAIN_T)
    assert len(_tsv(snap / "cdn_nodes.tsv")) == 8 and len(_tsv(snap / "cdn_edges.tsv")) == 6
    manifest = json.loads((snap / "manifest.json").read_text())
    assert manifest["skipped"] == {} and manifest["cdn_edges"] == 5


def test_build_is_deterministic(tmp_path):
    fx = generate(SynthSpec(packages=20, seed=8))
    paths = fx.write(str(tmp_path / "fx"))
    lo, hi = fx.index.min_timestamp, fx.index.max_timestamp
    at = ["--at", (lo + (hi - lo) / 2).isoformat(), "--at", hi.isoformat()]
    for name in ("a", "b"):
        assert main(["build", *_args(paths, *at, "--out", str(tmp_path / name))]) == EXIT_OK
    for d, _, files in os.walk(tmp_path / "a"):
        for f in files:
            p = os.path.join(d, f)
            q = p.replace(str(tmp_path / "a"), str(tmp_path / "b"))
            assert open(p, "rb").read() == open(q, "rb").read()


def test_build_empty_index(tmp_path):
    paths = write_fixture(tmp_path / "fx", make_index([]))
    out = tmp_path / "out"
    assert main(["build", *_args(paths, "--at", AT, "--out", str(out))]) == EXIT_OK
    snap = out / snapshot_dirname(CHAIN_T)
    assert len(_tsv(snap / "cdn_nodes.tsv")) == 1 and len(_tsv(snap / "cdn_edges.tsv")) == 1


def test_build_missing_graph_skips(tmp_path):
    paths = write_fixture(tmp_path / "fx", chain_index(), chain_graphs()[1:])
    out = tmp_path / "out"
    assert main(["build", *_args(paths, "--at", AT, "--out", str(out))]) == EXIT_OK
    manifest = json.loads((out / snapshot_dirname(CHAIN_T) / "manifest.json").read_text())
    assert list(manifest["skipped"]) == ["App"]
    assert main(["build", *_args(paths, "--at", AT, "--out", str(out), "--strict")]) == EXIT_UNRESOLVABLE


def test_build_with_start_step_count(chain_paths, tmp_path):
    out = tmp_path / "out"
    assert main(["build", *_args(chain_paths, "--start", AT, "--step", "1d", "--count", "3", "--out", str(out))]) == EXIT_OK
    assert len(os.listdir(out)) == 3


def test_analyze_chain(chain_paths, tmp_path):
    out = tmp_path / "out"
    main(["build", *_args(chain_paths, "--at", AT, "--out", str(out))])
    assert main(["analyze", *_args(chain_paths, "--out", str(out))]) == EXIT_OK
    rep = out / snapshot_dirname(CHAIN_T) / "reports"
    summary = json.loads((rep / "summary.json").read_text())
    inter = sum(summary["summary"]["inter"].values())
    intra = sum(summary["summary"]["intra"].values())
    assert (inter, intra) == (2, 3)
    rows = {(r[0], r[1]): r[2:] for r in _tsv(rep / "dependencies.tsv")[1:]}
    assert rows[("App", "metadata")] == ["1", "1"] and rows[("App", "call")] == ["1", "1"]
    reach_rows = {r[0]: r[1:] for r in _tsv(rep / "reach.tsv")[1:]}
    assert reach_rows["Lib2"] == ["1.0", "1.0"]


def test_analyze_equals_library(tmp_path):
    fx = generate(SynthSpec(packages=25, seed=21))
    paths = fx.write(str(tmp_path / "fx"))
    t = fx.index.max_timestamp
    out = tmp_path / "out"
    assert main(["build", *_args(paths, "--at", t.isoformat(), "--out", str(out))]) == EXIT_OK
    snap = str(out / snapshot_dirname(t))
    index = load_index(paths["index"], paths["timestamps"])
    store = CallGraphStore(index, paths["cg_store"])
    summary = analyze_snapshot(snap, ("summary", "dependencies", "reach", "function_reach", "bloat"), store)
    net, cdn = build_snapshot(index, t, store, exclude=validate(index).flagged)
    assert summary["summary"] == call_summary(cdn).as_dict()
    meta, call = MetadataView(net), CallView(net, cdn)
    rows = _tsv(os.path.join(snap, "reports", "dependencies.tsv"))[1:]
    want = [[p, v.name, *map(str, dependency_counts(v, p))] for v in (meta, call) for p in v.packages]
    assert rows == want
    reach_rows = {r[0]: (float(r[1]), float(r[2])) for r in _tsv(os.path.join(snap, "reports", "reach.tsv"))[1:]}
    for p, (a, b) in reach_rows.items():
        assert a == reach(meta, p) and b == reach(call, p)
    fr = function_reach_all(cdn, net.package_count)
    got = {r[0]: float(r[3]) for r in _tsv(os.path.join(snap, "reports", "function_reach.tsv"))[1:]}
    assert got == {n.key: v for n, v in fr.items()}


def test_diff_bump(tmp_path):
    paths = write_fixture(tmp_path / "fx", bump_index())
    out = tmp_path / "d"
    t1 = ts(7).isoformat()
    t2 = ts(11).isoformat()
    args = _args(paths, "--at", t1, "--at", t2, "--out", str(out), "--windows", "1d,5d", store=False)
    assert main(["diff", *args]) == EXIT_OK
    rows = _tsv(out / "diff.tsv")
    assert rows[1][:3] == ["A", "1.0.0", "1"] and "B: 1.1.0 -> 1.2.0" in rows[1][3]
    doc = json.loads((out / "diff.json").read_text())
    assert doc["changed_fraction"] == changed_fraction(bump_index(), ts(7), [parse_duration("1d"), parse_duration("5d")])
    same = tmp_path / "same"
    assert main(["diff", *_args(paths, "--at", t1, "--at", ts(8).isoformat(), "--out", str(same), store=False)]) == EXIT_OK
    assert json.loads((same / "diff.json").read_text())["changed"] == 0


def test_diff_unresolvable_root(tmp_path):
    idx = make_index([("d", "1.0.0", ts(1), []), ("r", "1.0.0", ts(2), [dep("d", ">=1.0.0, <1.0.0")])])
    paths = write_fixture(tmp_path / "fx", idx)
    args = _args(paths, "--at", ts(3).isoformat(), "--at", ts(4).isoformat(), "--out", str(tmp_path / "d"), store=False)
    # the release is flagged by validation and excluded, so nothing to re-resolve
    assert main(["diff", *args]) == EXIT_OK


def test_usage_errors(chain_paths, tmp_path):
    assert main(["build", *_args(chain_paths, "--out", str(tmp_path / "o"))]) == EXIT_USAGE
    assert main(["build", *_args(chain_paths, "--at", AT, "--at", BUMP_T1.isoformat(), "--out", str(tmp_path))]) == EXIT_USAGE
    assert main(["validate", "--index", str(tmp_path / "nope"), "--timestamps", chain_paths["timestamps"]]) == EXIT_USAGE
    assert main(["analyze", *_args(chain_paths, "--out", str(tmp_path), "--metrics", "bogus")]) == EXIT_USAGE
    assert main(["build", *_args(chain_paths, "--at", "not-a-time", "--out", str(tmp_path))]) == EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == EXIT_USAGE


def test_parse_error_exit(tmp_path):
    (tmp_path / "i.jsonl").write_text("{broken\n")
    (tmp_path / "t.csv").write_text("")
    assert main(["validate", "--index", str(tmp_path / "i.jsonl"), "--timestamps", str(tmp_path / "t.csv")]) == EXIT_PARSE


def test_build_ok_filter(chain_paths, tmp_path):
    ok = tmp_path / "ok.csv"
    ok.write_text("name,version\nLib2,0.2.0\nLib1,3.2.0\n")
    out = tmp_path / "out"
    assert main(["build", *_args(chain_paths, "--at", AT, "--out", str(out), "--build-ok", str(ok))]) == EXIT_OK
    roots = _tsv(out / snapshot_dirname(CHAIN_T) / "pdn_roots.csv")
    assert "App" not in {r[0].split(",")[0] for r in roots}
