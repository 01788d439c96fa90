"""Pluggable question sources: prompt rendering, remote calls, templates.

The remote protocol is a single HTTP POST carrying
``{"prompt", "temperature", "top_p", "max_tokens"}`` and returning
``{"text"}``; any model server can adapt to it. The offline template source
gives every leaf concept its own disjoint surface vocabulary, so tests have
exact alignment labels without a hosted model.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import DataValidationError, GenerationError
from .tree import KcTree


@dataclass(frozen=True)
class ConceptOption:
    kc: str
    name: str
    mastery: float


@dataclass(frozen=True)
class GenerationRequest:
    """Everything a question source sees: candidate concepts with the
    student's current mastery, and optionally a fixed concept to target."""

    candidates: tuple[ConceptOption, ...]
    oracle_kc: str | None = None

    def __post_init__(self) -> None:
        if not self.candidates:
            raise DataValidationError("candidate list must be non-empty")
        if self.oracle_kc is not None and self.oracle_kc not in {
            c.kc for c in self.candidates
        }:
            raise DataValidationError(
                f"oracle concept {self.oracle_kc!r} is not a candidate"
            )

    def option(self, kc: str) -> ConceptOption:
        for c in self.candidates:
            if c.kc == kc:
                return c
        raise DataValidationError(f"unknown candidate {kc!r}")


@dataclass(frozen=True)
class GenerationResult:
    intended_kc: str | None
    question_text: str
    raw: str


class QuestionSource(Protocol):
    def propose(self, request: GenerationRequest) -> GenerationResult: ...


@dataclass(frozen=True)
class PromptStyle:
    audience_plural: str = "third grade students"
    audience_singular: str = "a third grade student"


def render_prompt(request: GenerationRequest, style: PromptStyle = PromptStyle()) -> str:
    """Byte-stable generation prompt with the mastery list interpolated.

    With ``oracle_kc`` set, the concept choice is stated as fixed and the
    output contract pins the concept field to it.
    """
    mastery_lines = "\n".join(
        f"- {c.name}: {c.mastery:.4f}" for c in request.candidates
    )
    if request.oracle_kc is None:
        task = (
            "1) Select ONE knowledge concept that would be most helpful for the "
            "student to practice next, given their current mastery.\n"
            f"2) Generate exactly ONE English question for {style.audience_singular} "
            "that directly targets the selected knowledge concept."
        )
        concept_rule = '- "knowledge_concept" must be chosen from the provided list.'
        closing = (
            "Choose exactly one knowledge concept from above for this student to practice.\n"
            "Respond with the JSON object described in the instructions."
        )
    else:
        fixed = request.option(request.oracle_kc).name
        task = (
            f'1) The knowledge concept to practice has been fixed to: "{fixed}".\n'
            f"2) Generate exactly ONE English question for {style.audience_singular} "
            "that directly targets this knowledge concept."
        )
        concept_rule = f'- "knowledge_concept" must be exactly "{fixed}".'
        closing = (
            "Generate a question for the fixed knowledge concept above.\n"
            "Respond with the JSON object described in the instructions."
        )
    return (
        f"You are a helpful assistant that generates English questions for "
        f"{style.audience_plural} to support learning.\n"
        "\n"
        "You are given a set of candidate knowledge concepts and the student's "
        "current mastery levels. Your task is:\n"
        f"{task}\n"
        "\n"
        "You must output a single JSON object following the format:\n"
        "{\n"
        '"knowledge_concept": "...",\n'
        '"question_text": "..."\n'
        "}\n"
        "\n"
        "Rules:\n"
        "- Output MUST be a valid JSON object with exactly these two fields.\n"
        '- Field names must match exactly: "knowledge_concept", "question_text".\n'
        f"{concept_rule}\n"
        '- "question_text" must be in English, contain no answer, and match the '
        "knowledge_concept.\n"
        "- Do not output anything outside the JSON object.\n"
        "\n"
        "Knowledge Concepts and Student's Mastery Level:\n"
        "\n"
        f"{mastery_lines}\n"
        "\n"
        f"{closing}\n"
    )


_JSON_BLOCK = re.compile(r"\{.*\}", re.DOTALL)


def parse_generation(
    raw: str, candidates: Sequence[ConceptOption]
) -> GenerationResult:
    """Extract (intended concept, question text) from generator output.

    Structured outputs are read directly; otherwise every line naming a
    candidate concept (or the concept field itself) is stripped so the
    concept name cannot leak into the question text, and the remainder is
    the question.
    """
    if not raw.strip():
        raise GenerationError("generator returned empty output")
    by_name = {c.name: c.kc for c in candidates}
    by_id = {c.kc: c.kc for c in candidates}

    obj = _try_json(raw)
    if obj is None:
        match = _JSON_BLOCK.search(raw)
        if match:
            obj = _try_json(match.group(0))
    if isinstance(obj, dict):
        question = obj.get("question_text")
        if isinstance(question, str) and question.strip():
            concept = obj.get("knowledge_concept")
            intended = None
            if isinstance(concept, str):
                intended = by_name.get(concept) or by_id.get(concept)
                if intended is None:
                    lowered = concept.strip().casefold()
                    for name, kc in by_name.items():
                        if name.casefold() == lowered:
                            intended = kc
                            break
            return GenerationResult(
                intended_kc=intended, question_text=question.strip(), raw=raw
            )

    names = [c.name for c in candidates]
    kept = []
    for line in raw.splitlines():
        stripped = line.strip().strip("{}",)
        if not stripped:
            continue
        if "knowledge_concept" in stripped:
            continue
        if any(name in stripped for name in names):
            continue
        kept.append(stripped)
    question = " ".join(kept).strip()
    question = question.strip('"').strip()
    if question.startswith("question_text"):
        question = question[len("question_text"):].strip(' :"').strip()
    if not question:
        raise GenerationError("no question text recoverable from generator output")
    return GenerationResult(intended_kc=None, question_text=question, raw=raw)


def _try_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return None


_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_word(rng: np.random.Generator, syllables: int = 3) -> str:
    return "".join(
        _CONSONANTS[int(rng.integers(len(_CONSONANTS)))]
        + _VOWELS[int(rng.integers(len(_VOWELS)))]
        for _ in range(syllables)
    )


def _stable_int(*parts: object) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class TemplateLibrary:
    """Per-leaf question templates with globally disjoint vocabularies.

    Each leaf owns its name tokens (when unique across leaves) plus a set of
    generated pseudo-words; questions are composed only from that vocabulary
    and digits, so a question's surface form identifies its concept exactly.
    """

    def __init__(self, tree: KcTree, seed: int = 0, words_per_kc: int = 8):
        self.tree = tree
        self.seed = seed
        rng = np.random.default_rng(seed)
        token_counts: dict[str, int] = {}
        leaf_tokens: dict[str, list[str]] = {}
        for kc in tree.leaves:
            tokens = [t for t in re.split(r"\W+", tree.name_of(kc).casefold()) if t]
            leaf_tokens[kc] = tokens
            for t in set(tokens):
                token_counts[t] = token_counts.get(t, 0) + 1
        used: set[str] = set(token_counts)
        self._vocab: dict[str, tuple[str, ...]] = {}
        self._anchors: dict[str, tuple[str, ...]] = {}
        for kc in tree.leaves:
            anchors = [t for t in dict.fromkeys(leaf_tokens[kc]) if token_counts[t] == 1]
            words = list(anchors)
            while len(words) < words_per_kc:
                word = _pseudo_word(rng)
                if word not in used:
                    used.add(word)
                    words.append(word)
            self._vocab[kc] = tuple(words)
            self._anchors[kc] = tuple(anchors)

    def vocabulary(self, kc: str) -> tuple[str, ...]:
        if kc not in self._vocab:
            raise DataValidationError(f"no template family registered for {kc!r}")
        return self._vocab[kc]

    def generate(self, kc: str, seed: int = 0) -> GenerationResult:
        """Deterministic templated question for one leaf concept.

        The concept's own name tokens always appear (questions reference
        their subject), padded with family-specific filler words and numbers.
        """
        vocab = self.vocabulary(kc)
        rng = np.random.default_rng(_stable_int(self.seed, kc, seed))
        n_words = int(rng.integers(5, 9))
        words = list(self._anchors[kc])[:n_words]
        while len(words) < n_words:
            words.append(vocab[int(rng.integers(len(vocab)))])
        order = rng.permutation(len(words))
        words = [words[i] for i in order]
        a, b = int(rng.integers(2, 20)), int(rng.integers(2, 20))
        words.insert(int(rng.integers(1, len(words))), str(a))
        words.insert(int(rng.integers(1, len(words))), str(b))
        text = " ".join(words)
        question = text[0].upper() + text[1:] + "?"
        raw = json.dumps(
            {"knowledge_concept": self.tree.name_of(kc), "question_text": question},
            ensure_ascii=False,
        )
        return GenerationResult(intended_kc=kc, question_text=question, raw=raw)

    def corpus(self, per_kc: int, seed: int = 0) -> list[tuple[str, str]]:
        """(kc, question) training pairs, ``per_kc`` questions per leaf."""
        return [
            (kc, self.generate(kc, seed=_stable_int(seed, i)).question_text)
            for kc in self.tree.leaves
            for i in range(per_kc)
        ]


def template_generate(library: TemplateLibrary, kc: str, seed: int = 0) -> GenerationResult:
    return library.generate(kc, seed)


@dataclass(frozen=True)
class TemplateQuestionSource:
    """Offline stand-in for a trained generator.

    Targets the oracle concept when one is fixed; otherwise picks a
    candidate deterministically from the request contents and its own seed.
    """

    library: TemplateLibrary
    seed: int = 0

    def propose(self, request: GenerationRequest) -> GenerationResult:
        draw = _stable_int(self.seed, *(c.kc for c in request.candidates),
                           *(f"{c.mastery:.12f}" for c in request.candidates))
        if request.oracle_kc is not None:
            kc = request.oracle_kc
        else:
            rng = np.random.default_rng(draw)
            kc = request.candidates[int(rng.integers(len(request.candidates)))].kc
        return self.library.generate(kc, seed=draw)


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float = 0.8
    top_p: float = 0.8
    max_tokens: int = 512


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    timeout_s: float = 30.0
    auth_header_name: str | None = None
    auth_header_value: str | None = None

    ENV_URL = "TREEKT_GENERATOR_URL"
    ENV_AUTH_NAME = "TREEKT_GENERATOR_AUTH_HEADER"
    ENV_AUTH_VALUE = "TREEKT_GENERATOR_AUTH_VALUE"

    @classmethod
    def from_env(cls, base_url: str | None = None, timeout_s: float = 30.0) -> "EndpointConfig":
        url = base_url or os.environ.get(cls.ENV_URL)
        if not url:
            raise DataValidationError(
                f"no generator endpoint configured (set {cls.ENV_URL})"
            )
        return cls(
            base_url=url,
            timeout_s=timeout_s,
            auth_header_name=os.environ.get(cls.ENV_AUTH_NAME),
            auth_header_value=os.environ.get(cls.ENV_AUTH_VALUE),
        )


def remote_generate(
    endpoint: EndpointConfig,
    prompt: str,
    decoding: DecodingConfig = DecodingConfig(),
    attempts: int = 3,
    backoff_s: float = 0.25,
) -> str:
    """POST the prompt to the generator endpoint and return the raw
    completion; transport failures retry with exponential backoff."""
    headers = {}
    if endpoint.auth_header_name and endpoint.auth_header_value:
        headers[endpoint.auth_header_name] = endpoint.auth_header_value
    payload = {
        "prompt": prompt,
        "temperature": decoding.temperature,
        "top_p": decoding.top_p,
        "max_tokens": decoding.max_tokens,
    }
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            response = httpx.post(
                endpoint.base_url,
                json=payload,
                headers=headers,
                timeout=endpoint.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise GenerationError(f"generator timed out after {endpoint.timeout_s}s") from exc
        except httpx.TransportError as exc:
            last_error = exc
            if attempt < attempts - 1:
                time.sleep(backoff_s * (2**attempt))
            continue
        if response.status_code != 200:
            raise GenerationError(
                f"generator returned status {response.status_code}: {response.text[:200]}"
            )
        try:
            return str(response.json()["text"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise GenerationError(f"generator response missing text field: {exc}") from None
    raise GenerationError(f"generator unreachable after {attempts} attempts: {last_error}")


@dataclass(frozen=True)
class RemoteQuestionSource:
    endpoint: EndpointConfig
    decoding: DecodingConfig = DecodingConfig()
    style: PromptStyle = PromptStyle()

    def propose(self, request: GenerationRequest) -> GenerationResult:
        prompt = render_prompt(request, self.style)
        raw = remote_generate(self.endpoint, prompt, self.decoding)
        return parse_generation(raw, request.candidates)
