import numpy as np
import pytest

from treekt.engine import Difficulty, InteractionRecord, StudentHistory, TracerParams
from treekt.generator import TemplateLibrary
from treekt.synth import template_tree
from treekt.tree import KcTree
from treekt.verifier import VerifierTrainConfig, train_verifier


@pytest.fixture
def star_tree() -> KcTree:
    """Root with two leaf children; the worked-example tree."""
    return KcTree.from_parent_links(
        [("R", "root", None), ("L1", "leaf one", "R"), ("L2", "leaf two", "R")]
    )


@pytest.fixture
def star_params() -> TracerParams:
    return TracerParams(
        gamma={"R": 0.5, "L1": 0.4, "L2": 0.4},
        epsilon=0.2,
        r_easy=0.9,
        r_med=0.8,
        r_hard=0.5,
    )


@pytest.fixture
def one_correct_on_l1() -> StudentHistory:
    return StudentHistory(
        "s1", (InteractionRecord("L1", True, Difficulty.MEDIUM),)
    )


@pytest.fixture(scope="session")
def toy_setup():
    """Ten-concept template tree, its library, and a verifier trained on it."""
    tree = template_tree(10, seed=0)
    library = TemplateLibrary(tree, seed=0)
    corpus = library.corpus(per_kc=12, seed=0)
    result = train_verifier(corpus, tree, VerifierTrainConfig(epochs=30))
    return tree, library, result.model


def random_tree_links(rng: np.random.Generator, n_nodes: int):
    """Random single-rooted tree as (id, name, parent) triples; node i may
    attach to any earlier node."""
    links = [("n0", "node 0", None)]
    for i in range(1, n_nodes):
        parent = int(rng.integers(i))
        links.append((f"n{i}", f"node {i}", f"n{parent}"))
    return links


def random_instance(rng: np.random.Generator, max_nodes: int = 12, max_records: int = 20):
    """Random (tree, params, history) triple with valid rate ordering."""
    n_nodes = int(rng.integers(1, max_nodes + 1))
    tree = KcTree.from_parent_links(random_tree_links(rng, n_nodes))
    cuts = np.sort(rng.uniform(0.02, 0.98, size=3))
    eps = float(cuts[0] * 0.9)
    r_hard, r_med, r_easy = (float(c) for c in cuts)
    r_easy = min(0.99, r_easy + 0.005)
    params = TracerParams(
        gamma={kc: float(rng.uniform(0.05, 0.95)) for kc in tree.ids()},
        epsilon=eps,
        r_easy=r_easy,
        r_med=r_med,
        r_hard=r_hard,
    )
    leaves = tree.leaves
    n_records = int(rng.integers(0, max_records + 1))
    records = tuple(
        InteractionRecord(
            kc=leaves[int(rng.integers(len(leaves)))],
            correct=bool(rng.integers(2)),
            difficulty=list(Difficulty)[int(rng.integers(3))],
        )
        for _ in range(n_records)
    )
    return tree, params, StudentHistory("rand", records)


def oracle_inputs(tree, params, history):
    """Translate a (tree, params, history) triple into enum_oracle arrays."""
    ids = tree.ids()
    index = {kc: i for i, kc in enumerate(ids)}
    parents = [
        index[tree.node(kc).parent] if tree.node(kc).parent else -1 for kc in ids
    ]
    gamma = [params.gamma[kc] for kc in ids]
    records = [
        (index[rec.kc], rec.correct, params.r_for(rec.difficulty))
        for rec in history.records
    ]
    return parents, gamma, records
