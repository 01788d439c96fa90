"""Question-concept alignment verifier.

Questions and concept names are embedded into a shared space by a
deterministic provider and two learned linear projections; the alignment
logit is the inner product of the projected pair. Training minimizes an
InfoNCE contrastive loss whose negatives combine the other concepts in each
batch with sibling concepts drawn from the tree (hard negatives). At scoring
time the raw logits for a candidate set are standardized and squashed:
``score = sigmoid((logit - mean) / (tau * std))``, which is invariant to
positive affine rescalings of the logits and preserves their argmax.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import DataValidationError
from .tree import KcTree


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


_WS = re.compile(r"\s+")


class HashedNgramEmbedder:
    """Character n-gram hashing embedder: deterministic, training-free.

    Trigrams of the normalized text are hashed into a fixed number of signed
    buckets and the result is L2-normalized. A remote sentence encoder can
    replace it behind the same protocol.
    """

    def __init__(self, n: int = 3, dim: int = 256):
        if n < 1 or dim < 1:
            raise DataValidationError("ngram size and dimension must be positive")
        self.n = n
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        normalized = " " + _WS.sub(" ", text.casefold()).strip() + " "
        vec = np.zeros(self.dim)
        for i in range(max(0, len(normalized) - self.n + 1)):
            h = zlib.crc32(normalized[i : i + self.n].encode("utf-8"))
            sign = 1.0 if (h >> 16) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        self._cache[text] = vec
        return vec

    def to_dict(self) -> dict:
        return {"kind": "ngram-hash", "n": self.n, "dim": self.dim}

    @staticmethod
    def from_dict(obj: dict) -> "HashedNgramEmbedder":
        if obj.get("kind") != "ngram-hash":
            raise DataValidationError(f"unknown provider kind {obj.get('kind')!r}")
        return HashedNgramEmbedder(n=int(obj["n"]), dim=int(obj["dim"]))


@dataclass
class VerifierModel:
    """Embedding provider plus question/concept projections and temperature."""

    provider: EmbeddingProvider
    q_proj: np.ndarray
    c_proj: np.ndarray
    tau: float = 0.07

    def __post_init__(self) -> None:
        self.q_proj = np.asarray(self.q_proj, dtype=np.float64)
        self.c_proj = np.asarray(self.c_proj, dtype=np.float64)
        if self.q_proj.shape != self.c_proj.shape:
            raise DataValidationError("projection shapes must match")
        if self.q_proj.shape[1] != self.provider.dim:
            raise DataValidationError("projection input dim must match provider dim")
        if not self.tau > 0:
            raise DataValidationError("tau must be positive")
        self._concept_cache: dict[str, np.ndarray] = {}

    @staticmethod
    def identity_init(
        provider: EmbeddingProvider, tau: float = 0.07, noise: float = 0.0, seed: int = 0
    ) -> "VerifierModel":
        eye = np.eye(provider.dim)
        if noise > 0.0:
            rng = np.random.default_rng(seed)
            return VerifierModel(
                provider,
                eye + rng.normal(0.0, noise, eye.shape),
                eye + rng.normal(0.0, noise, eye.shape),
                tau,
            )
        return VerifierModel(provider, eye.copy(), eye.copy(), tau)

    def project_question(self, text: str) -> np.ndarray:
        if not text.strip():
            raise DataValidationError("question text is empty")
        return self.q_proj @ self.provider.embed(text)

    def project_concept(self, name: str) -> np.ndarray:
        cached = self._concept_cache.get(name)
        if cached is None:
            cached = self.c_proj @ self.provider.embed(name)
            self._concept_cache[name] = cached
        return cached

    def logits(self, question_text: str, concept_names: Sequence[str]) -> np.ndarray:
        q = self.project_question(question_text)
        return np.array([float(q @ self.project_concept(n)) for n in concept_names])


def logit(model: VerifierModel, question_text: str, concept_name: str) -> float:
    """Raw alignment logit between a question and one concept name."""
    return float(model.logits(question_text, [concept_name])[0])


def infonce_loss(
    model: VerifierModel,
    pairs: Sequence[tuple[str, str]],
    hard_negatives: Sequence[Sequence[str]] | None = None,
) -> float:
    """Mean contrastive loss over (question, concept-name) pairs.

    Negatives for each pair are the other pairs' concepts (per occurrence,
    skipping those equal to the pair's own concept) plus that pair's hard
    negatives. Computed with max-subtraction for stability.
    """
    if not pairs:
        raise DataValidationError("empty batch")
    hard_negatives = hard_negatives or [[] for _ in pairs]
    if len(hard_negatives) != len(pairs):
        raise DataValidationError("hard_negatives must align with pairs")
    total = 0.0
    for i, (question, concept) in enumerate(pairs):
        negatives = [c for j, (_, c) in enumerate(pairs) if j != i and c != concept]
        negatives.extend(hard_negatives[i])
        if not negatives:
            raise DataValidationError(f"pair {i} has no negatives")
        z = model.logits(question, [concept] + negatives)
        m = float(z.max())
        total += -(z[0] - m) + math.log(np.exp(z - m).sum())
    return total / len(pairs)


@dataclass(frozen=True)
class VerifierTrainConfig:
    epochs: int = 70
    batch_size: int = 64
    learning_rate: float = 1e-3
    tau: float = 0.07
    seed: int = 0
    hard_negatives_per_pair: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise DataValidationError("batch_size must be at least 2")
        if self.epochs < 1 or self.learning_rate <= 0 or self.tau <= 0:
            raise DataValidationError("epochs, learning_rate, and tau must be positive")
        if self.hard_negatives_per_pair < 0:
            raise DataValidationError("hard_negatives_per_pair must be nonnegative")


@dataclass(frozen=True)
class VerifierTrainResult:
    model: VerifierModel
    loss_trace: tuple[float, ...]


def train_verifier(
    corpus: Sequence[tuple[str, str]],
    tree: KcTree,
    config: VerifierTrainConfig = VerifierTrainConfig(),
    provider: EmbeddingProvider | None = None,
) -> VerifierTrainResult:
    """Fit the projections by SGD on the contrastive loss.

    ``corpus`` holds (leaf kc id, question text) pairs. Each time a pair is
    visited, its hard negatives are drawn uniformly from the siblings of its
    concept (skipped when none exist) and combined with in-batch negatives.
    Shuffling, sampling, and initialization are all driven by the seed.
    """
    if not corpus:
        raise DataValidationError("empty training corpus")
    for kc, question in corpus:
        if not tree.is_leaf(kc):
            raise DataValidationError(f"corpus concept {kc!r} is not a tree leaf")
        if not question.strip():
            raise DataValidationError(f"corpus question for {kc!r} is empty")
    concepts = sorted({kc for kc, _ in corpus})
    if len(concepts) == 1 and not tree.siblings(concepts[0]):
        raise DataValidationError(
            "corpus covers a single concept with no siblings: no negatives exist"
        )

    provider = provider or HashedNgramEmbedder()
    rng = np.random.default_rng(config.seed)
    d = provider.dim
    q_proj = np.eye(d) + rng.normal(0.0, 0.01, (d, d))
    c_proj = np.eye(d) + rng.normal(0.0, 0.01, (d, d))

    questions = np.stack([provider.embed(q) for _, q in corpus])  # (P, d)
    slot_of = {kc: i for i, kc in enumerate(tree.ids())}
    name_vecs = np.stack([provider.embed(tree.name_of(kc)) for kc in tree.ids()])
    pair_concept = np.array([slot_of[kc] for kc, _ in corpus])
    pair_siblings = [[slot_of[s] for s in tree.siblings(kc)] for kc, _ in corpus]

    n_pairs = len(corpus)
    trace: list[float] = []
    for _ in range(config.epochs):
        perm = rng.permutation(n_pairs)
        epoch_loss = 0.0
        epoch_pairs = 0
        for start in range(0, n_pairs, config.batch_size):
            batch = perm[start : start + config.batch_size]
            U = questions[batch]  # (B, d)
            A = U @ q_proj.T  # (B, k)
            B_all = name_vecs @ c_proj.T  # (C, k)
            coef = np.zeros((len(batch), name_vecs.shape[0]))
            batch_loss = 0.0
            used = 0
            for row, pair_idx in enumerate(batch):
                pos = int(pair_concept[pair_idx])
                neg_slots = [
                    int(pair_concept[j])
                    for j in batch
                    if j != pair_idx and pair_concept[j] != pos
                ]
                siblings = pair_siblings[pair_idx]
                if siblings:
                    for _ in range(config.hard_negatives_per_pair):
                        neg_slots.append(siblings[int(rng.integers(len(siblings)))])
                if not neg_slots:
                    continue
                slots = [pos] + neg_slots
                z = A[row] @ B_all[slots].T
                z -= z.max()
                e = np.exp(z)
                p = e / e.sum()
                batch_loss += -math.log(p[0])
                grad = p.copy()
                grad[0] -= 1.0
                for slot, g in zip(slots, grad):
                    coef[row, slot] += g
                used += 1
            if used == 0:
                continue
            epoch_loss += batch_loss
            epoch_pairs += used
            # dQ = sum_i outer(dL/da_i, u_i); dC = sum_{i,c} coef[i,c] outer(a_i, w_c)
            grad_q = (coef @ B_all).T @ U / used
            grad_c = A.T @ coef @ name_vecs / used
            q_proj -= config.learning_rate * grad_q
            c_proj -= config.learning_rate * grad_c
        if epoch_pairs == 0:
            raise DataValidationError("no trainable pairs: negatives never available")
        trace.append(epoch_loss / epoch_pairs)

    model = VerifierModel(provider=provider, q_proj=q_proj, c_proj=c_proj, tau=config.tau)
    return VerifierTrainResult(model=model, loss_trace=tuple(trace))


@dataclass(frozen=True)
class AlignmentScore:
    kc: str
    raw_logit: float
    mean: float
    std: float
    score: float


def alignment_score(
    model: VerifierModel,
    tree: KcTree,
    question_text: str,
    kc: str,
    candidates: Sequence[str],
) -> AlignmentScore:
    """Standardized sigmoid score of ``kc`` against the candidate set.

    The mean and population standard deviation are taken over the logits of
    all candidates for this question; a near-zero spread degenerates to 0.5.
    """
    candidates = list(candidates)
    if len(candidates) < 2:
        raise DataValidationError("candidate set must have at least 2 concepts")
    if kc not in candidates:
        raise DataValidationError(f"{kc!r} is not in the candidate set")
    logits = model.logits(question_text, [tree.name_of(c) for c in candidates])
    mean = float(logits.mean())
    std = float(logits.std())
    raw = float(logits[candidates.index(kc)])
    if std < 1e-9:
        score = 0.5
    else:
        score = 1.0 / (1.0 + math.exp(-(raw - mean) / (model.tau * std)))
    return AlignmentScore(kc=kc, raw_logit=raw, mean=mean, std=std, score=score)


def identify_kc(
    model: VerifierModel,
    tree: KcTree,
    question_text: str,
    candidates: Sequence[str],
) -> str:
    """Candidate with the highest raw logit; ties keep candidate order."""
    candidates = list(candidates)
    if not candidates:
        raise DataValidationError("empty candidate set")
    logits = model.logits(question_text, [tree.name_of(c) for c in candidates])
    return candidates[int(np.argmax(logits))]


def save_verifier(model: VerifierModel, path: str | Path) -> None:
    provider = model.provider
    if not isinstance(provider, HashedNgramEmbedder):
        raise DataValidationError("only ngram-hash providers are serializable")
    obj = {
        "dim": int(model.q_proj.shape[0]),
        "tau": model.tau,
        "q_proj": model.q_proj.tolist(),
        "c_proj": model.c_proj.tolist(),
        "provider": provider.to_dict(),
    }
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_verifier(path: str | Path) -> VerifierModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        provider = HashedNgramEmbedder.from_dict(obj["provider"])
        model = VerifierModel(
            provider=provider,
            q_proj=np.array(obj["q_proj"]),
            c_proj=np.array(obj["c_proj"]),
            tau=float(obj["tau"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"malformed verifier model file: {exc}") from None
    if model.q_proj.shape[0] != obj["dim"]:
        raise DataValidationError("model file dim does not match projections")
    return model
