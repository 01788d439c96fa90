"""Synthetic data generation: trees, parameters, and simulated cohorts.

Cohorts are sampled from the tracer's own generative story (static latent
mastery per student, difficulty-dependent answer rates), which makes
generate-and-refit the standard way to exercise EM and the simulator without
redistributable datasets.
"""

from __future__ import annotations

import numpy as np

from .engine import Difficulty, InteractionRecord, StudentHistory, TracerParams
from .errors import DataValidationError
from .generator import _pseudo_word
from .tree import KcTree


def synthetic_tree(n_leaves: int, branching: int = 5) -> KcTree:
    """Balanced two-level hierarchy: root, group nodes, ``n_leaves`` leaves."""
    if n_leaves < 1:
        raise DataValidationError("need at least one leaf")
    links: list[tuple[str, str, str | None]] = [("root", "root", None)]
    if n_leaves == 1:
        links.append(("kc-0", "concept 0", "root"))
        return KcTree.from_parent_links(links)
    n_groups = max(1, (n_leaves + branching - 1) // branching)
    for g in range(n_groups):
        links.append((f"group-{g}", f"group {g}", "root"))
    for i in range(n_leaves):
        links.append((f"kc-{i}", f"concept {i}", f"group-{i % n_groups}"))
    return KcTree.from_parent_links(links)


def synthetic_params(
    tree: KcTree,
    seed: int = 0,
    epsilon: float = 0.2,
    r_easy: float = 0.9,
    r_med: float = 0.75,
    r_hard: float = 0.55,
    gamma_low: float = 0.2,
    gamma_high: float = 0.6,
) -> TracerParams:
    rng = np.random.default_rng(seed)
    return TracerParams(
        gamma={kc: float(rng.uniform(gamma_low, gamma_high)) for kc in tree.ids()},
        epsilon=epsilon,
        r_easy=r_easy,
        r_med=r_med,
        r_hard=r_hard,
    )


def template_tree(n_kcs: int, seed: int = 0) -> KcTree:
    """Flat toy hierarchy with distinctive pseudo-word leaf names.

    Every leaf is a sibling of every other, so template corpora built on it
    exercise both in-batch and sibling hard negatives.
    """
    if n_kcs < 1:
        raise DataValidationError("need at least one concept")
    rng = np.random.default_rng(seed)
    used: set[str] = set()
    links: list[tuple[str, str, str | None]] = [("root", "course", None)]
    for i in range(n_kcs):
        while True:
            name = f"{_pseudo_word(rng)} {_pseudo_word(rng)}"
            if name not in used:
                used.add(name)
                break
        links.append((f"KC-{i}", name, "root"))
    return KcTree.from_parent_links(links)


def sample_mastery(tree: KcTree, params: TracerParams, rng: np.random.Generator) -> dict[str, int]:
    """One latent mastery assignment drawn top-down from the prior."""
    mastery: dict[str, int] = {}
    for kc in tree.topological_order():
        parent = tree.node(kc).parent
        if parent is not None and mastery[parent] == 1:
            mastery[kc] = 1
        else:
            mastery[kc] = int(rng.random() < params.gamma[kc])
    return mastery


def generate_cohort(
    tree: KcTree,
    params: TracerParams,
    n_students: int,
    n_records: int,
    seed: int = 0,
    mixed_difficulty: bool = True,
) -> list[StudentHistory]:
    """Simulate ``n_students`` histories of ``n_records`` leaf practices."""
    rng = np.random.default_rng(seed)
    leaves = tree.leaves
    difficulties = list(Difficulty) if mixed_difficulty else [Difficulty.MEDIUM]
    histories = []
    for s in range(n_students):
        mastery = sample_mastery(tree, params, rng)
        records = []
        for _ in range(n_records):
            kc = leaves[int(rng.integers(len(leaves)))]
            difficulty = difficulties[int(rng.integers(len(difficulties)))]
            rate = params.r_for(difficulty) if mastery[kc] else params.epsilon
            records.append(
                InteractionRecord(kc=kc, correct=bool(rng.random() < rate), difficulty=difficulty)
            )
        histories.append(StudentHistory(f"student-{s:04d}", tuple(records)))
    return histories
