"""Live tutoring session service.

HTTP+JSON API over the engine: create a session against a registered tree
and parameter set, read mastery state, fetch the recommended next concept
(optionally with a generated question), and submit answers. Sessions live in
memory behind per-session locks; an optional append-only event log replays
them on restart.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .engine import (
    Difficulty,
    InteractionRecord,
    StudentHistory,
    Tracer,
    TracerParams,
    append_observation,
)
from .errors import DataValidationError, TreektError
from .generator import ConceptOption, GenerationRequest, QuestionSource
from .policy import select_best_kc
from .tree import KcTree


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _not_found(message: str) -> ApiError:
    return ApiError(404, "not_found", message)


class ArtifactRegistry:
    """Trees and parameter sets available to sessions, loaded at startup."""

    def __init__(self):
        self.trees: dict[str, KcTree] = {}
        self.params: dict[str, TracerParams] = {}
        self._tracers: dict[tuple[str, str], Tracer] = {}

    def add_tree(self, tree_id: str, tree: KcTree) -> None:
        self.trees[tree_id] = tree

    def add_params(self, params_id: str, params: TracerParams) -> None:
        self.params[params_id] = params

    def tracer(self, tree_id: str, params_id: str) -> Tracer:
        key = (tree_id, params_id)
        if key not in self._tracers:
            if tree_id not in self.trees:
                raise _not_found(f"unknown tree {tree_id!r}")
            if params_id not in self.params:
                raise _not_found(f"unknown params {params_id!r}")
            self._tracers[key] = Tracer(self.trees[tree_id], self.params[params_id])
        return self._tracers[key]


@dataclass
class Session:
    id: str
    tree_id: str
    params_id: str
    history: StudentHistory
    created_at: str
    updated_at: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    cached_recommendation: dict | None = None


class HistoryRecordBody(BaseModel):
    kc: str
    correct: bool
    difficulty: str = "medium"


class CreateSessionBody(BaseModel):
    tree: str
    params: str
    history: list[HistoryRecordBody] | None = None
    student_id: str = "live"


class AnswerBody(BaseModel):
    kc: str
    correct: bool


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class SessionStore:
    def __init__(self, registry: ArtifactRegistry, event_log: Path | None = None):
        self.registry = registry
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.event_log = event_log
        self._log_lock = threading.Lock()

    def _append_event(self, event: dict) -> None:
        if self.event_log is None:
            return
        with self._log_lock:
            with open(self.event_log, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def create(
        self,
        tree_id: str,
        params_id: str,
        records: Sequence[InteractionRecord],
        student_id: str,
        session_id: str | None = None,
        log: bool = True,
    ) -> Session:
        tracer = self.registry.tracer(tree_id, params_id)
        history = StudentHistory(student_id, tuple(records))
        tracer.counts(history)  # validates leaf-only, known concepts
        session = Session(
            id=session_id or secrets.token_urlsafe(24),
            tree_id=tree_id,
            params_id=params_id,
            history=history,
            created_at=_now(),
            updated_at=_now(),
        )
        with self._lock:
            self.sessions[session.id] = session
        if log:
            self._append_event(
                {
                    "event": "create",
                    "session_id": session.id,
                    "tree": tree_id,
                    "params": params_id,
                    "student_id": student_id,
                    "history": [
                        {"kc": r.kc, "correct": r.correct, "difficulty": r.difficulty.value}
                        for r in records
                    ],
                }
            )
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise _not_found(f"unknown session {session_id!r}")
        return session

    def answer(self, session_id: str, kc: str, correct: bool, log: bool = True) -> Session:
        session = self.get(session_id)
        tracer = self.registry.tracer(session.tree_id, session.params_id)
        with session.lock:
            session.history = append_observation(
                session.history, kc, correct, Difficulty.MEDIUM, tracer.tree
            )
            session.updated_at = _now()
            session.cached_recommendation = None
        if log:
            self._append_event(
                {"event": "answer", "session_id": session_id, "kc": kc, "correct": correct}
            )
        return session

    def replay(self) -> int:
        """Rebuild sessions from the event log; returns replayed event count."""
        if self.event_log is None or not Path(self.event_log).exists():
            return 0
        count = 0
        for line in Path(self.event_log).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            event = json.loads(line)
            if event["event"] == "create":
                records = [
                    InteractionRecord(
                        kc=r["kc"],
                        correct=bool(r["correct"]),
                        difficulty=Difficulty(r.get("difficulty", "medium")),
                    )
                    for r in event.get("history", [])
                ]
                self.create(
                    event["tree"],
                    event["params"],
                    records,
                    event.get("student_id", "live"),
                    session_id=event["session_id"],
                    log=False,
                )
            elif event["event"] == "answer":
                self.answer(event["session_id"], event["kc"], bool(event["correct"]), log=False)
            count += 1
        return count


def _snapshot(tracer: Tracer, session: Session) -> dict:
    post = tracer.posterior(tracer.counts(session.history))
    mastery = {kc: float(post[i]) for i, kc in enumerate(tracer.ids)}
    return {
        "session_id": session.id,
        "tree": session.tree_id,
        "params": session.params_id,
        "mastery": mastery,
        "total_mastery": float(post.sum()),
        "history": [
            {"kc": r.kc, "correct": r.correct, "difficulty": r.difficulty.value}
            for r in session.history.records
        ],
        "updated_at": session.updated_at,
    }


def create_app(
    registry: ArtifactRegistry,
    question_source: QuestionSource | None = None,
    cors_origins: Sequence[str] = ("*",),
    event_log: Path | str | None = None,
) -> FastAPI:
    app = FastAPI(title="treekt tutoring service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = SessionStore(registry, Path(event_log) if event_log else None)
    store.replay()
    app.state.store = store

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(DataValidationError)
    async def handle_validation(request: Request, exc: DataValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "invalid_data", "message": str(exc)}},
        )

    @app.exception_handler(RequestValidationError)
    async def handle_body_validation(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": {"code": "invalid_request", "message": str(exc.errors())}},
        )

    @app.exception_handler(TreektError)
    async def handle_runtime(request: Request, exc: TreektError):
        return JSONResponse(
            status_code=500,
            content={"error": {"code": "internal", "message": str(exc)}},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.get("/trees/{tree_id}")
    def get_tree(tree_id: str):
        tree = registry.trees.get(tree_id)
        if tree is None:
            raise _not_found(f"unknown tree {tree_id!r}")
        return {
            "id": tree_id,
            "root": tree.root,
            "nodes": [
                {"id": n.id, "name": n.name, "parent": n.parent}
                for n in tree.nodes.values()
            ],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        try:
            records = [
                InteractionRecord(
                    kc=r.kc, correct=r.correct, difficulty=Difficulty(r.difficulty)
                )
                for r in body.history or []
            ]
        except ValueError as exc:
            raise DataValidationError(f"bad history record: {exc}") from None
        session = store.create(body.tree, body.params, records, body.student_id)
        return {"session_id": session.id}

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        session = store.get(session_id)
        tracer = registry.tracer(session.tree_id, session.params_id)
        with session.lock:
            return _snapshot(tracer, session)

    @app.get("/sessions/{session_id}/recommendation")
    def get_recommendation(session_id: str):
        session = store.get(session_id)
        tracer = registry.tracer(session.tree_id, session.params_id)
        with session.lock:
            if session.cached_recommendation is not None:
                return session.cached_recommendation
            tree = tracer.tree
            outcome = select_best_kc(tracer.params, tree, session.history, tracer=tracer)
            post = tracer.posterior(tracer.counts(session.history))
            leaf_mastery = {
                kc: float(post[tracer.index[kc]]) for kc in tree.leaves
            }
            question = None
            if question_source is not None:
                candidates = tuple(
                    ConceptOption(kc=kc, name=tree.name_of(kc), mastery=leaf_mastery[kc])
                    for kc in tree.leaves
                )
                result = question_source.propose(
                    GenerationRequest(candidates=candidates, oracle_kc=outcome.selected)
                )
                question = {
                    "intended_kc": result.intended_kc,
                    "question_text": result.question_text,
                }
            values = outcome.values_by_kc()
            payload = {
                "session_id": session.id,
                "kc": outcome.selected,
                "kc_name": tree.name_of(outcome.selected),
                "education_value": values[outcome.selected],
                "baseline": outcome.per_candidate[0].baseline,
                "mastery_rank": outcome.mastery_rank,
                "values": values,
                "mastery": leaf_mastery,
                "question": question,
            }
            session.cached_recommendation = payload
            return payload

    @app.post("/sessions/{session_id}/answers")
    def post_answer(session_id: str, body: AnswerBody):
        session = store.answer(session_id, body.kc, body.correct)
        tracer = registry.tracer(session.tree_id, session.params_id)
        with session.lock:
            return _snapshot(tracer, session)

    return app
