"""Knowledge-concept hierarchy: loading, validation, and deterministic traversal.

A tree document is JSON-lines text with one object per node,
``{"id": ..., "name": ..., "parent": ...}``, where exactly one node has a
null parent. Document order is preserved everywhere (children lists, leaf
enumeration, tie-breaking) so that downstream selection and sampling are
reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DataValidationError


@dataclass(frozen=True)
class KcNode:
    """One concept node; ``parent`` is None only for the root."""

    id: str
    name: str
    parent: str | None = None
    children: tuple[str, ...] = ()


@dataclass(frozen=True)
class KcTree:
    """Immutable concept hierarchy keyed by node id, in document order.

    Construction is lenient: structural problems are reported by
    :func:`validate_tree` rather than raised, so that a report can name every
    offending node. :func:`loads_tree` is the strict entry point.
    """

    nodes: dict[str, KcNode]

    @staticmethod
    def from_parent_links(entries: Iterable[tuple[str, str, str | None]]) -> "KcTree":
        """Build a tree from (id, name, parent) triples, deriving children."""
        order = [(i, n, p) for i, n, p in entries]
        children: dict[str, list[str]] = {i: [] for i, _, _ in order}
        for node_id, _, parent in order:
            if parent is not None and parent in children:
                children[parent].append(node_id)
        nodes = {
            i: KcNode(id=i, name=n, parent=p, children=tuple(children[i]))
            for i, n, p in order
        }
        return KcTree(nodes=nodes)

    def ids(self) -> tuple[str, ...]:
        return tuple(self.nodes)

    def __contains__(self, kc: str) -> bool:
        return kc in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, kc: str) -> KcNode:
        try:
            return self.nodes[kc]
        except KeyError:
            raise DataValidationError(f"unknown concept id {kc!r}") from None

    def name_of(self, kc: str) -> str:
        return self.node(kc).name

    @property
    def root(self) -> str:
        roots = [n.id for n in self.nodes.values() if n.parent is None]
        if len(roots) != 1:
            raise DataValidationError(
                f"tree must have exactly one root, found {len(roots)}"
            )
        return roots[0]

    @property
    def leaves(self) -> tuple[str, ...]:
        """All childless nodes in document order; the candidate set for
        selection and exam sampling."""
        return tuple(n.id for n in self.nodes.values() if not n.children)

    def is_leaf(self, kc: str) -> bool:
        return not self.node(kc).children

    def siblings(self, kc: str) -> tuple[str, ...]:
        """Other children of ``kc``'s parent, in document order."""
        node = self.node(kc)
        if node.parent is None:
            return ()
        return tuple(c for c in self.nodes[node.parent].children if c != kc)

    def topological_order(self) -> tuple[str, ...]:
        """BFS order from the root; every parent precedes its children."""
        root = self.root
        out = [root]
        frontier = list(self.nodes[root].children)
        while frontier:
            out.extend(frontier)
            nxt: list[str] = []
            for kc in frontier:
                nxt.extend(self.nodes[kc].children)
            frontier = nxt
        if len(out) != len(self.nodes):
            raise DataValidationError("tree is not fully reachable from the root")
        return tuple(out)


def siblings(tree: KcTree, kc: str) -> tuple[str, ...]:
    return tree.siblings(kc)


def leaves(tree: KcTree) -> tuple[str, ...]:
    return tree.leaves


def loads_tree(text: str) -> KcTree:
    """Parse and validate a tree document; raises on any violation."""
    entries: list[tuple[str, str, str | None]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"line {lineno}: not valid JSON ({exc})") from None
        if not isinstance(obj, dict) or "id" not in obj or "name" not in obj:
            raise DataValidationError(f"line {lineno}: node object needs id and name")
        node_id = obj["id"]
        if not isinstance(node_id, str) or not node_id:
            raise DataValidationError(f"line {lineno}: id must be a non-empty string")
        if node_id in seen:
            raise DataValidationError(f"line {lineno}: duplicate id {node_id!r}")
        seen.add(node_id)
        parent = obj.get("parent")
        if parent is not None and not isinstance(parent, str):
            raise DataValidationError(f"line {lineno}: parent must be a string or null")
        entries.append((node_id, str(obj["name"]), parent))
    if not entries:
        raise DataValidationError("tree document has no nodes")
    tree = KcTree.from_parent_links(entries)
    report = validate_tree(tree)
    if report:
        raise DataValidationError("invalid tree: " + "; ".join(report))
    return tree


def load_tree(path: str | Path) -> KcTree:
    return loads_tree(Path(path).read_text(encoding="utf-8"))


def dumps_tree(tree: KcTree) -> str:
    """Canonical serialization; round-trips through :func:`loads_tree`."""
    lines = [
        json.dumps({"id": n.id, "name": n.name, "parent": n.parent}, ensure_ascii=False)
        for n in tree.nodes.values()
    ]
    return "\n".join(lines) + "\n"


def save_tree(tree: KcTree, path: str | Path) -> None:
    Path(path).write_text(dumps_tree(tree), encoding="utf-8")


def validate_tree(tree: KcTree) -> list[str]:
    """Check every structural invariant; violations are data, not faults.

    Returns an empty list iff the tree is a single connected rooted tree with
    consistent parent/child links and no duplicate children.
    """
    report: list[str] = []
    nodes = tree.nodes
    roots = [n.id for n in nodes.values() if n.parent is None]
    if len(roots) == 0:
        report.append("no root (cycle detected: every node has a parent)")
    elif len(roots) > 1:
        report.append(f"forest, not tree: multiple roots {roots}")

    child_of: dict[str, list[str]] = {}
    for node in nodes.values():
        if node.parent is not None and node.parent not in nodes:
            report.append(f"node {node.id!r} references missing parent {node.parent!r}")
        if len(set(node.children)) != len(node.children):
            report.append(f"node {node.id!r} has duplicate children")
        for child in node.children:
            if child not in nodes:
                report.append(f"node {node.id!r} lists missing child {child!r}")
                continue
            child_of.setdefault(child, []).append(node.id)

    for child, parents in child_of.items():
        if len(parents) > 1:
            report.append(f"node {child!r} has multiple parents {parents}")
        elif nodes[child].parent != parents[0]:
            report.append(
                f"node {child!r} parent pointer {nodes[child].parent!r} "
                f"disagrees with child list of {parents[0]!r}"
            )
    for node in nodes.values():
        if node.parent is not None and node.parent in nodes:
            if node.id not in nodes[node.parent].children:
                report.append(
                    f"node {node.id!r} missing from children of {node.parent!r}"
                )

    if len(roots) == 1:
        reached: set[str] = set()
        frontier = [roots[0]]
        while frontier:
            kc = frontier.pop()
            if kc in reached or kc not in nodes:
                continue
            reached.add(kc)
            frontier.extend(nodes[kc].children)
        unreachable = [i for i in nodes if i not in reached]
        if unreachable:
            report.append(f"cycle detected or disconnected nodes: {unreachable}")
    return report
