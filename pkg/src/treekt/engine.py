"""Hidden-Markov-tree knowledge tracer.

Latent per-concept mastery is binary and static within a history. Mastering a
parent concept entails mastering each child; an unmastered parent's child is
mastered with probability ``gamma[child]``, and the root is mastered with
probability ``gamma[root]``. A practice answer is correct with probability
``r_d`` (by question difficulty) when the practiced leaf is mastered and with
guessing probability ``epsilon`` otherwise. Posterior mastery marginals are
exact, computed by a two-pass sum-product sweep in log space; parameters are
fitted by EM over cohorts of histories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import DataValidationError, TreektError
from .tree import KcTree


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def index(self) -> int:
        return _DIFF_INDEX[self]


_DIFF_INDEX = {Difficulty.EASY: 0, Difficulty.MEDIUM: 1, Difficulty.HARD: 2}


def _check_prob(name: str, value: float) -> None:
    if not (0.0 < value < 1.0) or not math.isfinite(value):
        raise DataValidationError(f"{name} must lie strictly in (0, 1), got {value}")


@dataclass(frozen=True)
class TracerParams:
    """Model parameters: per-node mastery priors plus shared answer rates.

    ``gamma`` must cover every node of the governing tree; the root entry is
    the prior root mastery. The rates obey the strict ordering
    ``epsilon < r_hard < r_med < r_easy``.
    """

    gamma: dict[str, float]
    epsilon: float
    r_easy: float
    r_med: float
    r_hard: float

    def __post_init__(self) -> None:
        for kc, g in self.gamma.items():
            _check_prob(f"gamma[{kc!r}]", g)
        _check_prob("epsilon", self.epsilon)
        _check_prob("r_easy", self.r_easy)
        _check_prob("r_med", self.r_med)
        _check_prob("r_hard", self.r_hard)
        if not (self.epsilon < self.r_hard < self.r_med < self.r_easy):
            raise DataValidationError(
                "rates must satisfy epsilon < r_hard < r_med < r_easy, got "
                f"{self.epsilon}, {self.r_hard}, {self.r_med}, {self.r_easy}"
            )

    def r_for(self, difficulty: Difficulty) -> float:
        return (self.r_easy, self.r_med, self.r_hard)[difficulty.index]

    def require_cover(self, tree: KcTree) -> None:
        missing = [kc for kc in tree.ids() if kc not in self.gamma]
        if missing:
            raise DataValidationError(f"gamma missing entries for nodes {missing}")

    def to_dict(self) -> dict:
        return {
            "gamma": dict(self.gamma),
            "epsilon": self.epsilon,
            "r_easy": self.r_easy,
            "r_med": self.r_med,
            "r_hard": self.r_hard,
        }

    @staticmethod
    def from_dict(obj: dict) -> "TracerParams":
        try:
            return TracerParams(
                gamma={str(k): float(v) for k, v in obj["gamma"].items()},
                epsilon=float(obj["epsilon"]),
                r_easy=float(obj["r_easy"]),
                r_med=float(obj["r_med"]),
                r_hard=float(obj["r_hard"]),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataValidationError(f"malformed params object: {exc}") from None


def load_params(path: str | Path) -> TracerParams:
    return TracerParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_params(params: TracerParams, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class InteractionRecord:
    kc: str
    correct: bool
    difficulty: Difficulty = Difficulty.MEDIUM


@dataclass(frozen=True)
class StudentHistory:
    """Ordered practice record for one student; truncations are prefixes."""

    student_id: str
    records: tuple[InteractionRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def prefix(self, t: int) -> "StudentHistory":
        return StudentHistory(self.student_id, self.records[:t])


def append_observation(
    history: StudentHistory,
    kc: str,
    correct: bool,
    difficulty: Difficulty = Difficulty.MEDIUM,
    tree: KcTree | None = None,
) -> StudentHistory:
    """Return a new history with one more record; the original is unchanged.

    When ``tree`` is given, ``kc`` must be one of its leaves.
    """
    if tree is not None and not tree.is_leaf(kc):
        raise DataValidationError(f"observations attach to leaves only, got {kc!r}")
    record = InteractionRecord(kc=kc, correct=bool(correct), difficulty=difficulty)
    return StudentHistory(history.student_id, history.records + (record,))


def load_histories(path: str | Path) -> list[StudentHistory]:
    """Read a JSON-lines history file, grouping records per student in
    first-seen order."""
    grouped: dict[str, list[InteractionRecord]] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            record = InteractionRecord(
                kc=str(obj["kc"]),
                correct=bool(obj["correct"]),
                difficulty=Difficulty(obj.get("difficulty", "medium")),
            )
            student = str(obj["student_id"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataValidationError(f"history line {lineno}: {exc}") from None
        grouped.setdefault(student, []).append(record)
    return [StudentHistory(s, tuple(rs)) for s, rs in grouped.items()]


def save_histories(histories: Iterable[StudentHistory], path: str | Path) -> None:
    lines = []
    for history in histories:
        for rec in history.records:
            lines.append(
                json.dumps(
                    {
                        "student_id": history.student_id,
                        "kc": rec.kc,
                        "correct": rec.correct,
                        "difficulty": rec.difficulty.value,
                    },
                    ensure_ascii=False,
                )
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class PosteriorState:
    """Posterior mastery probability for every node of the tree."""

    mastery: dict[str, float]

    def total(self) -> float:
        return float(sum(self.mastery.values()))

    def __getitem__(self, kc: str) -> float:
        return self.mastery[kc]


class Tracer:
    """Compiled (tree, params) pair; all inference runs through it.

    Histories are reduced to per-node observation counts
    ``counts[node, difficulty, outcome]`` (outcome 1 = correct), which is
    sufficient because latent mastery is static within a history.
    """

    def __init__(self, tree: KcTree, params: TracerParams):
        params.require_cover(tree)
        self.tree = tree
        self.params = params
        ids = tree.ids()
        self.ids = ids
        self.index = {kc: i for i, kc in enumerate(ids)}
        self.n_nodes = len(ids)
        self.parents = np.array(
            [self.index[tree.node(kc).parent] if tree.node(kc).parent else -1 for kc in ids],
            dtype=np.int64,
        )
        self.order = np.array(
            [self.index[kc] for kc in tree.topological_order()], dtype=np.int64
        )
        gamma = np.array([params.gamma[kc] for kc in ids])
        self.log_g1 = np.log(gamma)
        self.log_g0 = np.log1p(-gamma)
        self.leaf_indices = np.array([self.index[kc] for kc in tree.leaves], dtype=np.int64)
        # log_emit[d, k, a] = log p(answer a | mastery k, difficulty d)
        rates = np.array([params.r_easy, params.r_med, params.r_hard])
        self.log_emit = np.empty((3, 2, 2))
        self.log_emit[:, 1, 1] = np.log(rates)
        self.log_emit[:, 1, 0] = np.log1p(-rates)
        self.log_emit[:, 0, 1] = math.log(params.epsilon)
        self.log_emit[:, 0, 0] = math.log1p(-params.epsilon)
        self._log_r_med = float(np.log(params.r_med))
        self._log_eps = math.log(params.epsilon)
        prior = np.empty(self.n_nodes)
        for i in self.order:
            p = self.parents[i]
            prior[i] = gamma[i] if p < 0 else prior[p] + (1.0 - prior[p]) * gamma[i]
        self.prior = prior

    def counts(self, history: StudentHistory) -> np.ndarray:
        out = np.zeros((self.n_nodes, 3, 2))
        for rec in history.records:
            i = self.index.get(rec.kc)
            if i is None:
                raise DataValidationError(
                    f"history {history.student_id!r} references unknown concept {rec.kc!r}"
                )
            if self.tree.nodes[rec.kc].children:
                raise DataValidationError(
                    f"history {history.student_id!r} practices non-leaf concept {rec.kc!r}"
                )
            out[i, rec.difficulty.index, 1 if rec.correct else 0] += 1.0
        return out

    def counts_stack(self, histories: Sequence[StudentHistory]) -> np.ndarray:
        return np.stack([self.counts(h) for h in histories]) if histories else np.zeros(
            (0, self.n_nodes, 3, 2)
        )

    def log_evidence(self, counts: np.ndarray) -> np.ndarray:
        """Per-node log-likelihood of the observations under each mastery
        state; accepts one (N, 3, 2) count array or a stack of them."""
        return np.einsum("...nda,dka->...nk", counts, self.log_emit)

    def sweep(self, log_ev: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if log_ev.ndim == 2:
            log_ev = log_ev[None, :, :]
        return _kernels.ud_batch(self.parents, self.order, self.log_g1, self.log_g0, log_ev)

    def posterior(self, counts: np.ndarray) -> np.ndarray:
        post, _, _ = self.sweep(self.log_evidence(counts))
        return post[0]

    def loglik(self, counts: np.ndarray) -> float:
        _, _, ll = self.sweep(self.log_evidence(counts))
        return float(ll[0])

    def education_sweep(self, counts: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
        """Education value of a hypothetical correct medium answer on each
        leaf.

        Returns (per-leaf total posterior mastery, current total mastery,
        current per-node posteriors). One batched sweep covers all leaves
        plus the unmodified baseline row.
        """
        base = self.log_evidence(counts)
        L = len(self.leaf_indices)
        batch = np.broadcast_to(base, (L + 1, self.n_nodes, 2)).copy()
        rows = np.arange(L)
        batch[rows, self.leaf_indices, 1] += self._log_r_med
        batch[rows, self.leaf_indices, 0] += self._log_eps
        post, _, _ = self.sweep(batch)
        values = post[:L].sum(axis=1)
        return values, float(post[L].sum()), post[L]

    def state(self, post: np.ndarray) -> PosteriorState:
        return PosteriorState({kc: float(post[i]) for i, kc in enumerate(self.ids)})


def prior_marginals(params: TracerParams, tree: KcTree) -> PosteriorState:
    """Mastery marginals before any observation, composed top-down."""
    tracer = Tracer(tree, params)
    return tracer.state(tracer.prior)


def infer_posteriors(
    params: TracerParams, tree: KcTree, history: StudentHistory
) -> PosteriorState:
    """Exact posterior mastery marginals given one history."""
    tracer = Tracer(tree, params)
    return tracer.state(tracer.posterior(tracer.counts(history)))


def predict_correctness(
    state: PosteriorState,
    params: TracerParams,
    kc: str,
    difficulty: Difficulty = Difficulty.MEDIUM,
) -> float:
    """Probability of a correct answer on ``kc``: the mastery-weighted
    mixture of the difficulty rate and the guessing rate."""
    if kc not in state.mastery:
        raise DataValidationError(f"unknown concept id {kc!r}")
    p1 = state.mastery[kc]
    return (1.0 - p1) * params.epsilon + p1 * params.r_for(difficulty)


def log_likelihood(
    params: TracerParams, tree: KcTree, histories: Sequence[StudentHistory]
) -> float:
    """Sum of log marginal likelihoods of the answer sequences."""
    if not histories:
        return 0.0
    tracer = Tracer(tree, params)
    _, _, ll = tracer.sweep(tracer.log_evidence(tracer.counts_stack(histories)))
    return float(ll.sum())


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 100
    ll_tolerance: float = 1e-6
    min_prob: float = 0.01
    max_prob: float = 0.99
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.min_prob < self.max_prob < 1.0):
            raise DataValidationError("need 0 < min_prob < max_prob < 1")
        if self.max_iters < 1:
            raise DataValidationError("max_iters must be positive")
        if self.ll_tolerance < 0:
            raise DataValidationError("ll_tolerance must be nonnegative")


@dataclass(frozen=True)
class EmResult:
    params: TracerParams
    trace: tuple[float, ...]
    converged: bool
    iterations: int


_RATE_GAP = 1e-3


def _project_rates(
    eps: float, r_hard: float, r_med: float, r_easy: float, lo: float, hi: float
) -> tuple[float, float, float, float]:
    """Clamp rates to [lo, hi] and restore the strict ordering by pooled
    adjacent averaging with a minimum gap."""
    v = [min(max(x, lo), hi) for x in (eps, r_hard, r_med, r_easy)]
    # pool adjacent violators into averaged blocks
    blocks: list[list[float]] = []
    for x in v:
        blocks.append([x])
        while len(blocks) > 1 and _mean(blocks[-2]) >= _mean(blocks[-1]):
            last = blocks.pop()
            blocks[-1].extend(last)
    w: list[float] = []
    for block in blocks:
        w.extend([_mean(block)] * len(block))
    # strictify with the minimum gap, then walk back from the cap
    for i in range(1, 4):
        w[i] = max(w[i], w[i - 1] + _RATE_GAP)
    w[3] = min(w[3], hi)
    for i in range(2, -1, -1):
        w[i] = min(w[i], w[i + 1] - _RATE_GAP)
    if w[0] <= 0.0:
        raise TreektError("rate projection collapsed below zero; widen prob bounds")
    return w[0], w[1], w[2], w[3]


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs)


def initial_params(tree: KcTree, seed: int = 0) -> TracerParams:
    """Fixed EM starting point with small seed-controlled perturbations."""
    rng = np.random.default_rng(seed)

    def jitter(x: float) -> float:
        return float(x + rng.uniform(-0.02, 0.02))

    return TracerParams(
        gamma={kc: jitter(0.5) for kc in tree.ids()},
        epsilon=jitter(0.25),
        r_hard=jitter(0.6),
        r_med=jitter(0.75),
        r_easy=jitter(0.9),
    )


def fit_em(
    tree: KcTree, histories: Sequence[StudentHistory], config: EmConfig = EmConfig()
) -> EmResult:
    """Fit parameters by EM over a cohort of histories.

    E-step: exact node and edge posteriors from the batched two-pass sweep.
    M-step: gamma from expected child-mastered-given-parent-unmastered
    transitions (root from mean posterior root mastery); answer rates from
    posterior-weighted correct-answer ratios per difficulty, with epsilon
    from the non-mastery-weighted analogue. Rates are clamped and reordered
    after every M-step, so the likelihood trace is checked rather than
    assumed monotone.
    """
    if not any(len(h) for h in histories):
        raise DataValidationError("EM needs at least one observation in the cohort")
    params = initial_params(tree, config.seed)
    tracer = Tracer(tree, params)
    counts = tracer.counts_stack(histories)  # (S, N, 3, 2)
    n_total = counts.sum(axis=3)  # (S, N, 3) attempts
    n_correct = counts[:, :, :, 1]
    parents = tracer.parents
    root = int(tracer.order[0])
    nonroot = np.array([i for i in range(tracer.n_nodes) if i != root], dtype=np.int64)

    trace: list[float] = []
    converged = False
    iterations = 0
    for _ in range(config.max_iters):
        iterations += 1
        log_ev = tracer.log_evidence(counts)
        post, eq10, ll_vec = tracer.sweep(log_ev)
        ll = float(ll_vec.sum())
        if not math.isfinite(ll):
            raise TreektError("non-finite likelihood during EM")
        trace.append(ll)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= config.ll_tolerance:
            converged = True
            break

        gamma_vec = np.array([params.gamma[kc] for kc in tracer.ids])
        new_gamma = gamma_vec.copy()
        if nonroot.size:
            num = eq10[:, nonroot].sum(axis=0)
            den = (1.0 - post[:, parents[nonroot]]).sum(axis=0)
            ok = den > 1e-12
            new_gamma[nonroot[ok]] = num[ok] / den[ok]
        new_gamma[root] = post[:, root].mean()
        new_gamma = np.clip(new_gamma, config.min_prob, config.max_prob)

        # emission statistics pooled per difficulty across all concepts
        r_num = np.einsum("snd,sn->d", n_correct, post)
        r_den = np.einsum("snd,sn->d", n_total, post)
        e_num = float(np.einsum("snd,sn->", n_correct, 1.0 - post))
        e_den = float(np.einsum("snd,sn->", n_total, 1.0 - post))
        rates = [params.r_easy, params.r_med, params.r_hard]
        for d in range(3):
            if r_den[d] > 1e-12:
                rates[d] = float(r_num[d] / r_den[d])
        eps = params.epsilon if e_den <= 1e-12 else e_num / e_den
        eps, r_hard, r_med, r_easy = _project_rates(
            eps, rates[2], rates[1], rates[0], config.min_prob, config.max_prob
        )
        params = TracerParams(
            gamma={kc: float(new_gamma[i]) for i, kc in enumerate(tracer.ids)},
            epsilon=eps,
            r_easy=r_easy,
            r_med=r_med,
            r_hard=r_hard,
        )
        tracer = Tracer(tree, params)

    if not converged:
        # record the likelihood of the final parameters
        _, _, ll_vec = tracer.sweep(tracer.log_evidence(counts))
        trace.append(float(ll_vec.sum()))
    return EmResult(
        params=params, trace=tuple(trace), converged=converged, iterations=iterations
    )
