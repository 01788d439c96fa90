"""Multi-round practice simulation and exam scoring.

Each round selects a concept per the configured policy, optionally generates
a question for it, identifies the concept the question actually tests (the
verifier's call, which is what the state update uses when question text
exists), appends one correct answer at the update difficulty, and re-infers
the student state. After all rounds the state is scored against one fixed
exam set shared by every policy and history in the run.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bank import ExamSet, QuestionBank, TruncatedHistory, sample_exam_set
from .engine import (
    Difficulty,
    PosteriorState,
    StudentHistory,
    Tracer,
    TracerParams,
    predict_correctness,
)
from .errors import DataValidationError
from .generator import ConceptOption, GenerationRequest, QuestionSource
from .policy import SelectionOutcome, select_best_kc
from .tree import KcTree
from .verifier import VerifierModel, identify_kc

POLICIES = ("initial", "random", "oracle", "generator", "generator_with_oracle_kc")
_QUESTION_POLICIES = ("generator", "generator_with_oracle_kc")


@dataclass(frozen=True)
class SimulationConfig:
    rounds: int = 10
    exam_size: int = 60
    policy: str = "oracle"
    seed: int = 0
    update_difficulty: Difficulty = Difficulty.MEDIUM

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise DataValidationError(
                f"unknown policy {self.policy!r}; expected one of {POLICIES}"
            )
        if self.policy == "initial":
            if self.rounds < 0:
                raise DataValidationError("rounds must be nonnegative")
        elif self.rounds < 1:
            raise DataValidationError(f"policy {self.policy!r} needs rounds >= 1")
        if self.exam_size < 1:
            raise DataValidationError("exam_size must be positive")


@dataclass(frozen=True)
class PracticeStep:
    intended_kc: str | None
    question_text: str
    verified_kc: str
    total_mastery: float


@dataclass(frozen=True)
class PracticeTrajectory:
    student_id: str
    steps: tuple[PracticeStep, ...]
    final_state: PosteriorState


def _stable_seed(*parts: object) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def run_practice(
    params: TracerParams,
    tree: KcTree,
    history: StudentHistory,
    config: SimulationConfig,
    question_source: QuestionSource | None = None,
    verifier_model: VerifierModel | None = None,
    tracer: Tracer | None = None,
    rng: np.random.Generator | None = None,
) -> PracticeTrajectory:
    """Simulate the practice rounds for one student history."""
    policy = config.policy
    if policy in _QUESTION_POLICIES:
        if question_source is None:
            raise DataValidationError(f"policy {policy!r} needs a question source")
        if verifier_model is None:
            raise DataValidationError(f"policy {policy!r} needs a verifier model")
    tracer = tracer or Tracer(tree, params)
    rng = rng or np.random.default_rng(_stable_seed(config.seed, history.student_id))
    leaves = tree.leaves
    counts = tracer.counts(history)
    diff_idx = config.update_difficulty.index

    rounds = 0 if policy == "initial" else config.rounds
    steps: list[PracticeStep] = []
    for _ in range(rounds):
        intended: str | None
        question_text = ""
        if policy == "random":
            intended = leaves[int(rng.integers(len(leaves)))]
            verified = intended
        elif policy == "oracle":
            values, _, _ = tracer.education_sweep(counts)
            intended = leaves[int(np.argmax(values))]
            verified = intended
        else:
            values, _, base_post = tracer.education_sweep(counts)
            candidates = tuple(
                ConceptOption(kc=kc, name=tree.name_of(kc), mastery=float(base_post[i]))
                for kc, i in zip(leaves, tracer.leaf_indices)
            )
            oracle_kc = None
            if policy == "generator_with_oracle_kc":
                oracle_kc = leaves[int(np.argmax(values))]
            result = question_source.propose(
                GenerationRequest(candidates=candidates, oracle_kc=oracle_kc)
            )
            question_text = result.question_text
            intended = oracle_kc if oracle_kc is not None else result.intended_kc
            verified = identify_kc(verifier_model, tree, question_text, leaves)
        counts[tracer.index[verified], diff_idx, 1] += 1.0
        post = tracer.posterior(counts)
        steps.append(
            PracticeStep(
                intended_kc=intended,
                question_text=question_text,
                verified_kc=verified,
                total_mastery=float(post.sum()),
            )
        )
    final_post = tracer.posterior(counts)
    return PracticeTrajectory(
        student_id=history.student_id,
        steps=tuple(steps),
        final_state=tracer.state(final_post),
    )


def exam_score(
    params: TracerParams,
    tree: KcTree,
    state_or_history: PosteriorState | StudentHistory,
    exam: ExamSet,
) -> float:
    """Mean predicted correctness over the exam entries at medium
    difficulty."""
    if not exam.entries:
        raise DataValidationError("exam set is empty")
    if isinstance(state_or_history, StudentHistory):
        tracer = Tracer(tree, params)
        state = tracer.state(tracer.posterior(tracer.counts(state_or_history)))
    else:
        state = state_or_history
    total = 0.0
    for kc, _ in exam.entries:
        total += predict_correctness(state, params, kc, Difficulty.MEDIUM)
    return total / len(exam.entries)


@dataclass(frozen=True)
class SimulationReport:
    config: dict
    per_history: tuple[dict, ...]
    aggregate: dict[str, dict]
    metadata: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "per_history": list(self.per_history),
                "aggregate": self.aggregate,
                "metadata": self.metadata,
            },
            indent=2,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(
            buffer, fieldnames=["student_id", "t", "policy", "exam_score"]
        )
        writer.writeheader()
        for row in self.per_history:
            writer.writerow(row)
        return buffer.getvalue()


def params_digest(params: TracerParams) -> str:
    canonical = json.dumps(params.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_cohort(
    params: TracerParams,
    tree: KcTree,
    cohort: Sequence[TruncatedHistory],
    config: SimulationConfig,
    exam: ExamSet | None = None,
    bank: QuestionBank | None = None,
    question_source: QuestionSource | None = None,
    verifier_model: VerifierModel | None = None,
    jobs: int = 1,
) -> SimulationReport:
    """Run practice plus exam scoring for every truncated history.

    One exam set (given, or sampled from the bank with the config seed) is
    shared across the whole cohort. Per-history randomness derives from
    (config seed, student id, t), so reports are independent of cohort
    ordering and bit-identical across reruns.
    """
    if not cohort:
        raise DataValidationError("empty cohort")
    if exam is None:
        if bank is None:
            raise DataValidationError("need either an exam set or a question bank")
        exam = sample_exam_set(bank, tree, config.exam_size, config.seed)
    tracer = Tracer(tree, params)

    def one(trunc: TruncatedHistory) -> dict:
        rng = np.random.default_rng(
            _stable_seed(config.seed, trunc.student_id, trunc.t)
        )
        trajectory = run_practice(
            params,
            tree,
            trunc.history,
            config,
            question_source=question_source,
            verifier_model=verifier_model,
            tracer=tracer,
            rng=rng,
        )
        return {
            "student_id": trunc.student_id,
            "t": trunc.t,
            "policy": config.policy,
            "exam_score": exam_score(params, tree, trajectory.final_state, exam),
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = tuple(pool.map(one, cohort))
    else:
        rows = tuple(one(t) for t in cohort)

    scores = np.array([row["exam_score"] for row in rows])
    aggregate = {
        config.policy: {
            "mean": float(scores.mean()),
            "std": float(scores.std()),
            "count": int(scores.size),
        }
    }
    return SimulationReport(
        config={
            "rounds": config.rounds,
            "exam_size": config.exam_size,
            "policy": config.policy,
            "seed": config.seed,
            "update_difficulty": config.update_difficulty.value,
        },
        per_history=rows,
        aggregate=aggregate,
        metadata={
            "exam_seed": exam.seed,
            "params_digest": params_digest(params),
            "n_histories": len(cohort),
        },
    )


def merge_reports(reports: Sequence[SimulationReport]) -> SimulationReport:
    """Combine per-policy reports over the same cohort and exam set."""
    if not reports:
        raise DataValidationError("nothing to merge")
    per_history = tuple(row for report in reports for row in report.per_history)
    aggregate: dict[str, dict] = {}
    for report in reports:
        aggregate.update(report.aggregate)
    merged_config = {"policies": [r.config["policy"] for r in reports]}
    merged_config.update({k: v for k, v in reports[0].config.items() if k != "policy"})
    return SimulationReport(
        config=merged_config,
        per_history=per_history,
        aggregate=aggregate,
        metadata=reports[0].metadata,
    )


def selection_rank_report(
    params: TracerParams,
    tree: KcTree,
    cohort: Sequence[TruncatedHistory],
) -> list[dict]:
    """Selection outcome per truncated history (no practice simulation),
    sorted ascending by the student's initial total mastery."""
    tracer = Tracer(tree, params)
    rows = []
    for trunc in cohort:
        outcome: SelectionOutcome = select_best_kc(
            params, tree, trunc.history, tracer=tracer
        )
        baseline = outcome.per_candidate[0].baseline if outcome.per_candidate else 0.0
        rows.append(
            {
                "student_id": trunc.student_id,
                "history_len": trunc.t,
                "selected": outcome.selected,
                "mastery_rank": outcome.mastery_rank,
                "initial_total_mastery": baseline,
                "values": outcome.values_by_kc(),
            }
        )
    rows.sort(key=lambda row: (row["initial_total_mastery"], row["student_id"], row["history_len"]))
    return rows
