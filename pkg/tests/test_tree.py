import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_tree_links
from treekt.errors import DataValidationError
from treekt.tree import (
    KcNode,
    KcTree,
    dumps_tree,
    leaves,
    loads_tree,
    siblings,
    validate_tree,
)


def doc(*rows: str) -> str:
    return "\n".join(rows)


SINGLE = '{"id": "R", "name": "root", "parent": null}'
STAR = doc(
    '{"id": "R", "name": "root", "parent": null}',
    '{"id": "A", "name": "a", "parent": "R"}',
    '{"id": "B", "name": "b", "parent": "R"}',
)


def test_loads_single_node():
    tree = loads_tree(SINGLE)
    assert tree.root == "R"
    assert tree.leaves == ("R",)


def test_loads_two_leaf_star():
    tree = loads_tree(STAR)
    assert tree.root == "R"
    assert tree.leaves == ("A", "B")
    assert tree.node("A").parent == "R"
    assert tree.node("R").children == ("A", "B")


def test_cycle_rejected():
    text = doc(
        '{"id": "R", "name": "r", "parent": "A"}',
        '{"id": "A", "name": "a", "parent": "R"}',
    )
    with pytest.raises(DataValidationError, match="cycle"):
        loads_tree(text)


def test_duplicate_id_rejected():
    text = doc(SINGLE, SINGLE)
    with pytest.raises(DataValidationError, match="duplicate"):
        loads_tree(text)


def test_missing_parent_rejected():
    text = doc(SINGLE, '{"id": "A", "name": "a", "parent": "ghost"}')
    with pytest.raises(DataValidationError, match="missing parent"):
        loads_tree(text)


def test_two_roots_rejected():
    text = doc(SINGLE, '{"id": "S", "name": "other root", "parent": null}')
    with pytest.raises(DataValidationError, match="forest"):
        loads_tree(text)


def test_malformed_json_rejected():
    with pytest.raises(DataValidationError, match="line 1"):
        loads_tree("{nope}")


def test_empty_document_rejected():
    with pytest.raises(DataValidationError):
        loads_tree("\n\n")


def test_roundtrip_bit_exact():
    canonical = dumps_tree(loads_tree(STAR))
    assert dumps_tree(loads_tree(canonical)) == canonical


def test_validate_clean_tree_empty_report(star_tree):
    assert validate_tree(star_tree) == []


def test_validate_multiple_parents():
    nodes = {
        "R": KcNode("R", "r", None, ("A", "B")),
        "A": KcNode("A", "a", "R", ("B",)),
        "B": KcNode("B", "b", "R", ()),
    }
    report = validate_tree(KcTree(nodes))
    assert any("multiple parents" in v and "'B'" in v for v in report)


def test_validate_two_roots():
    nodes = {
        "R": KcNode("R", "r", None, ()),
        "S": KcNode("S", "s", None, ()),
    }
    report = validate_tree(KcTree(nodes))
    assert any("forest" in v for v in report)


def test_siblings_star():
    tree = KcTree.from_parent_links(
        [("R", "r", None), ("A", "a", "R"), ("B", "b", "R"), ("C", "c", "R")]
    )
    assert siblings(tree, "A") == ("B", "C")
    assert siblings(tree, "R") == ()


def test_siblings_only_child():
    tree = KcTree.from_parent_links([("R", "r", None), ("A", "a", "R"), ("B", "b", "A")])
    assert siblings(tree, "B") == ()


def test_siblings_unknown_id(star_tree):
    with pytest.raises(DataValidationError, match="unknown"):
        siblings(star_tree, "nope")


def test_leaves_chain():
    tree = KcTree.from_parent_links([("R", "r", None), ("A", "a", "R"), ("B", "b", "A")])
    assert leaves(tree) == ("B",)


def test_leaves_document_order():
    tree = loads_tree(
        doc(
            '{"id": "R", "name": "r", "parent": null}',
            '{"id": "Z", "name": "z", "parent": "R"}',
            '{"id": "A", "name": "a", "parent": "R"}',
        )
    )
    assert leaves(tree) == ("Z", "A")


def test_parent_child_consistency(star_tree):
    for kc in star_tree.ids():
        node = star_tree.node(kc)
        if node.parent is None:
            assert kc == star_tree.root
        else:
            assert kc in star_tree.node(node.parent).children


def test_topological_order_parents_first():
    tree = KcTree.from_parent_links(
        [("R", "r", None), ("A", "a", "R"), ("B", "b", "A"), ("C", "c", "A")]
    )
    order = tree.topological_order()
    pos = {kc: i for i, kc in enumerate(order)}
    assert order[0] == "R"
    for kc in tree.ids():
        parent = tree.node(kc).parent
        if parent is not None:
            assert pos[parent] < pos[kc]


@given(seed=st.integers(0, 10_000), n_nodes=st.integers(1, 25))
@settings(max_examples=60, deadline=None)
def test_random_tree_structure_properties(seed, n_nodes):
    tree = KcTree.from_parent_links(
        random_tree_links(np.random.default_rng(seed), n_nodes)
    )
    assert validate_tree(tree) == []
    childless = {n.id for n in tree.nodes.values() if not n.children}
    assert set(leaves(tree)) == childless
    for kc in tree.ids():
        node = tree.node(kc)
        if node.parent is None:
            assert siblings(tree, kc) == ()
        else:
            sibs = siblings(tree, kc)
            assert kc not in sibs
            assert set(sibs) <= set(tree.node(node.parent).children)
    canonical = dumps_tree(tree)
    assert dumps_tree(loads_tree(canonical)) == canonical
