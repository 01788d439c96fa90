"""Question storage, exam sampling, history truncation, and student splits.

Question files are JSON-lines, one record per line:
``{"id", "kc", "text", "difficulty"}``. Exams are fixed once sampled: a seed
draws leaf concepts uniformly with replacement (restricted to leaves that
actually have questions) and one question uniformly per drawn concept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import Difficulty, StudentHistory
from .errors import DataValidationError
from .generator import TemplateLibrary
from .tree import KcTree

DEFAULT_CUT_POINTS = (10, 20, 30, 40, 50)


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    kc: str
    difficulty: Difficulty = Difficulty.MEDIUM

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise DataValidationError(f"question {self.id!r} has empty text")


@dataclass(frozen=True)
class QuestionBank:
    questions: dict[str, Question]
    by_kc: dict[str, tuple[str, ...]]

    @staticmethod
    def build(questions: Sequence[Question], tree: KcTree) -> "QuestionBank":
        table: dict[str, Question] = {}
        by_kc: dict[str, list[str]] = {}
        for q in questions:
            if q.id in table:
                raise DataValidationError(f"duplicate question id {q.id!r}")
            if q.kc not in tree:
                raise DataValidationError(
                    f"question {q.id!r} references unknown concept {q.kc!r}"
                )
            if not tree.is_leaf(q.kc):
                raise DataValidationError(
                    f"question {q.id!r} references non-leaf concept {q.kc!r}"
                )
            table[q.id] = q
            by_kc.setdefault(q.kc, []).append(q.id)
        return QuestionBank(
            questions=table, by_kc={k: tuple(v) for k, v in by_kc.items()}
        )

    def __len__(self) -> int:
        return len(self.questions)

    def question(self, qid: str) -> Question:
        try:
            return self.questions[qid]
        except KeyError:
            raise DataValidationError(f"unknown question id {qid!r}") from None


def loads_bank(text: str, tree: KcTree) -> QuestionBank:
    questions = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            questions.append(
                Question(
                    id=str(obj["id"]),
                    text=str(obj["text"]),
                    kc=str(obj["kc"]),
                    difficulty=Difficulty(obj.get("difficulty", "medium")),
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataValidationError(f"question line {lineno}: {exc}") from None
    return QuestionBank.build(questions, tree)


def load_bank(path: str | Path, tree: KcTree) -> QuestionBank:
    return loads_bank(Path(path).read_text(encoding="utf-8"), tree)


def save_bank(bank: QuestionBank, path: str | Path) -> None:
    lines = [
        json.dumps(
            {"id": q.id, "kc": q.kc, "text": q.text, "difficulty": q.difficulty.value},
            ensure_ascii=False,
        )
        for q in bank.questions.values()
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_bank(
    tree: KcTree, per_leaf: int = 3, seed: int = 0, library: TemplateLibrary | None = None
) -> QuestionBank:
    """Template-backed synthetic bank with ``per_leaf`` questions per leaf."""
    library = library or TemplateLibrary(tree, seed=seed)
    questions = [
        Question(
            id=f"{kc}-q{i}",
            text=library.generate(kc, seed=1000 + i).question_text,
            kc=kc,
            difficulty=Difficulty.MEDIUM,
        )
        for kc in tree.leaves
        for i in range(per_leaf)
    ]
    return QuestionBank.build(questions, tree)


@dataclass(frozen=True)
class ExamSet:
    """Fixed exam: (concept, question) entries plus the seed that drew them."""

    entries: tuple[tuple[str, str], ...]
    seed: int


def sample_exam_set(bank: QuestionBank, tree: KcTree, n: int, seed: int) -> ExamSet:
    """Draw ``n`` leaf concepts uniformly with replacement (leaves holding at
    least one question), then one of that concept's questions each."""
    if n < 1:
        raise DataValidationError("exam size must be positive")
    pool = [kc for kc in tree.leaves if bank.by_kc.get(kc)]
    if not pool:
        raise DataValidationError("no leaf concept has any question to sample")
    rng = np.random.default_rng(seed)
    entries = []
    for _ in range(n):
        kc = pool[int(rng.integers(len(pool)))]
        qids = bank.by_kc[kc]
        entries.append((kc, qids[int(rng.integers(len(qids)))]))
    return ExamSet(entries=tuple(entries), seed=seed)


def save_exam_set(exam: ExamSet, path: str | Path) -> None:
    obj = {
        "seed": exam.seed,
        "entries": [{"kc": kc, "question": qid} for kc, qid in exam.entries],
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_exam_set(path: str | Path) -> ExamSet:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return ExamSet(
            entries=tuple((str(e["kc"]), str(e["question"])) for e in obj["entries"]),
            seed=int(obj["seed"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"malformed exam set file: {exc}") from None


@dataclass(frozen=True)
class TruncatedHistory:
    """Length-``t`` prefix of one student's history, tagged for reporting."""

    student_id: str
    t: int
    history: StudentHistory


def truncate_histories(
    histories: Sequence[StudentHistory],
    cut_points: Sequence[int] = DEFAULT_CUT_POINTS,
) -> list[TruncatedHistory]:
    """Length-t prefixes per student for each cut point the student reaches."""
    cuts = list(cut_points)
    if any(c <= 0 for c in cuts) or any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise DataValidationError("cut points must be positive and increasing")
    out = []
    for history in histories:
        for t in cuts:
            if t <= len(history):
                out.append(
                    TruncatedHistory(
                        student_id=history.student_id, t=t, history=history.prefix(t)
                    )
                )
    return out


def split_students(
    histories: Sequence[StudentHistory], ratio: float, seed: int
) -> tuple[list[StudentHistory], list[StudentHistory]]:
    """Student-level train/test split; every history of a student lands on
    one side, so truncations cannot leak across the split."""
    if not (0.0 < ratio < 1.0):
        raise DataValidationError("ratio must lie strictly between 0 and 1")
    students = list(dict.fromkeys(h.student_id for h in histories))
    if len(students) < 2:
        raise DataValidationError("need at least 2 students to split")
    rng = np.random.default_rng(seed)
    order = [students[i] for i in rng.permutation(len(students))]
    n_train = min(max(int(round(ratio * len(students))), 1), len(students) - 1)
    train_ids = set(order[:n_train])
    train = [h for h in histories if h.student_id in train_ids]
    test = [h for h in histories if h.student_id not in train_ids]
    return train, test
