"""Next-concept selection: education value, argmax policy, baselines, ranks.

The education value of practicing a candidate leaf is the total posterior
mastery across every node of the tree after appending one hypothetical
correct medium-difficulty answer on that leaf. Selection is an exhaustive
argmax over leaves with document-order tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import (
    Difficulty,
    PosteriorState,
    StudentHistory,
    Tracer,
    TracerParams,
    append_observation,
)
from .errors import DataValidationError
from .tree import KcTree


@dataclass(frozen=True)
class EducationValue:
    kc: str
    value: float
    baseline: float


@dataclass(frozen=True)
class SelectionOutcome:
    selected: str
    per_candidate: tuple[EducationValue, ...]
    mastery_rank: int

    def values_by_kc(self) -> dict[str, float]:
        return {ev.kc: ev.value for ev in self.per_candidate}


def education_value(
    params: TracerParams,
    tree: KcTree,
    history: StudentHistory,
    candidate: str,
    tracer: Tracer | None = None,
) -> EducationValue:
    """Total posterior mastery after a hypothetical correct medium answer on
    ``candidate``, alongside the current total as baseline."""
    if not tree.is_leaf(candidate):
        raise DataValidationError(f"candidate {candidate!r} is not a leaf")
    tracer = tracer or Tracer(tree, params)
    counts = tracer.counts(history)
    augmented = append_observation(history, candidate, True, Difficulty.MEDIUM, tree)
    value = float(tracer.posterior(tracer.counts(augmented)).sum())
    baseline = float(tracer.posterior(counts).sum())
    return EducationValue(kc=candidate, value=value, baseline=baseline)


def select_best_kc(
    params: TracerParams,
    tree: KcTree,
    history: StudentHistory,
    tracer: Tracer | None = None,
) -> SelectionOutcome:
    """Evaluate every leaf and pick the argmax education value.

    Ties resolve to the earliest leaf in document order. The full
    per-candidate table is retained for analysis and what-if display.
    """
    tracer = tracer or Tracer(tree, params)
    if len(tracer.leaf_indices) == 0:
        raise DataValidationError("tree has no leaves to select from")
    counts = tracer.counts(history)
    values, baseline, base_post = tracer.education_sweep(counts)
    leaves = tree.leaves
    best = int(np.argmax(values))
    per_candidate = tuple(
        EducationValue(kc=kc, value=float(values[i]), baseline=baseline)
        for i, kc in enumerate(leaves)
    )
    leaf_mastery = base_post[tracer.leaf_indices]
    rank = _rank_descending(leaf_mastery, best)
    return SelectionOutcome(
        selected=leaves[best], per_candidate=per_candidate, mastery_rank=rank
    )


def random_policy(tree: KcTree, rng: int | np.random.Generator) -> str:
    """Uniform leaf choice; pass a Generator to draw a reproducible
    sequence, or a seed for a single deterministic draw."""
    leaves = tree.leaves
    if not leaves:
        raise DataValidationError("tree has no leaves to select from")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return leaves[int(rng.integers(len(leaves)))]


def mastery_rank(
    state: PosteriorState, leaves: Sequence[str], selected: str
) -> int:
    """1-based rank of ``selected`` among ``leaves`` by descending mastery;
    ties keep document order."""
    if selected not in leaves:
        raise DataValidationError(f"selected {selected!r} is not a candidate leaf")
    mastery = np.array([state.mastery[kc] for kc in leaves])
    return _rank_descending(mastery, list(leaves).index(selected))


def _rank_descending(values: np.ndarray, index: int) -> int:
    ahead = int(np.sum(values > values[index]))
    ties_before = int(np.sum(values[:index] == values[index]))
    return ahead + ties_before + 1
