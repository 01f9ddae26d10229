"""Call-based dependency networks for a package registry."""

from .callgraph import UNRESOLVED, CallEdge, CallGraphStore, FunctionNode, annotate, load_callgraph
from .index import Index, Release, load_index, mirror_at, runtime_deps, validate
from .resolver import PackageNetwork, ResolvedTree, changed_fraction, package_network, resolve_tree, tree_changed
from .semver import Version, compat_class, latest_matching, matches, parse_constraint, parse_version
from .unify import CDN, build_cdn, build_snapshot, link_dynamic, unify_release

__version__ = "0.1.0"
