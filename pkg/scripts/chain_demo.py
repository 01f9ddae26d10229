"""Three-package walkthrough (App -> Lib1 -> Lib2): builds the package and
call-based networks, prints both dependency views for App, then drops the
single call into Lib2 and shows the call-based view losing it."""

import os
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from cdnet.metrics import CallView, MetadataView, dependency_counts  # noqa: E402
from cdnet.serialize import cdn_to_dot, write_snapshot  # noqa: E402
from cdnet.unify import build_snapshot  # noqa: E402

from scenarios import CHAIN_T, chain_graphs, chain_index, store_of  # noqa: E402


def show(bar_calls_used: bool) -> None:
    idx = chain_index()
    net, cdn = build_snapshot(idx, CHAIN_T, store_of(idx, chain_graphs(bar_calls_used)))
    print(f"--- Lib1::bar calls Lib2::used: {bar_calls_used}")
    for e in sorted(cdn.edges):
        print(f"  {e.caller} -> {e.callee} [{e.dispatch}]")
    meta, call = MetadataView(net), CallView(net, cdn)
    print("  App (direct, transitive): metadata", dependency_counts(meta, "App"), "call", dependency_counts(call, "App"))
    return net, cdn


if __name__ == "__main__":
    net, cdn = show(True)
    show(False)
    with tempfile.TemporaryDirectory() as d:
        write_snapshot(net, cdn, d)
        print("--- written:", ", ".join(sorted(os.listdir(d))))
    print(cdn_to_dot(cdn))
