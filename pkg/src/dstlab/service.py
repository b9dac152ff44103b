"""Session-oriented HTTP service for live tracking with friction.

Each session binds to one frozen checkpoint. A user turn decodes the state,
reports per-slot probabilities, and poses friction questions; the committed
state advances immediately when no questions arise, otherwise only once
confirmations come back. Sessions are in-memory, single-writer (one lock per
session), and isolated from each other; run records are read-only views over
the run directory.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .codec import Vocabulary, encode_context
from .correction import Thresholds
from .decoding import CachedValueSource, DecodedState, StateDecoder, TurnDecode
from .experiment import list_run_records, load_run_record
from .friction import FrictionQuestion, UserAnswer, apply_answers, build_questions
from .metrics import turn_errors
from .model import Checkpoint, load_checkpoint
from .ontology import DialogueState, Ontology, Turn

logger = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


@dataclass
class LoadedModel:
    checkpoint_id: str
    checkpoint: Checkpoint
    vocab: Vocabulary
    ontology: Ontology
    thresholds: Thresholds
    decoder: StateDecoder


class CheckpointRegistry:
    """Read-only map of checkpoint ids to loaded models."""

    def __init__(self):
        self._models: dict[str, LoadedModel] = {}

    def add(self, checkpoint_id: str, checkpoint: Checkpoint, vocab: Vocabulary,
            ontology: Ontology, thresholds: Thresholds | None = None) -> None:
        if thresholds is None:
            stored = checkpoint.extra.get("thresholds")
            thresholds = Thresholds(**stored) if stored else Thresholds()
        self._models[checkpoint_id] = LoadedModel(
            checkpoint_id=checkpoint_id,
            checkpoint=checkpoint,
            vocab=vocab,
            ontology=ontology,
            thresholds=thresholds,
            decoder=StateDecoder(checkpoint, vocab, ontology),
        )

    def add_from_files(self, checkpoint_id: str, checkpoint_path: str | Path,
                       vocab_path: str | Path, ontology: Ontology,
                       thresholds: Thresholds | None = None) -> None:
        vocab = Vocabulary.load(vocab_path)
        ckpt = load_checkpoint(checkpoint_path, ontology_hash=ontology.content_hash(),
                               vocab_hash=vocab.content_hash())
        self.add(checkpoint_id, ckpt, vocab, ontology, thresholds)

    def get(self, checkpoint_id: str) -> LoadedModel:
        if checkpoint_id not in self._models:
            raise ServiceError("unknown_checkpoint", f"no checkpoint {checkpoint_id!r}", status=404)
        return self._models[checkpoint_id]

    def ids(self) -> list[str]:
        return sorted(self._models)


@dataclass
class Session:
    id: str
    model: LoadedModel
    thresholds: Thresholds
    turns: list[Turn] = field(default_factory=list)
    golds: list[DialogueState | None] = field(default_factory=list)
    committed_state: DialogueState = field(default_factory=DialogueState)
    last_decoded: DecodedState | None = None
    last_probs: np.ndarray | None = None
    pending_questions: list[FrictionQuestion] = field(default_factory=list)
    question_index: dict[str, FrictionQuestion] = field(default_factory=dict)
    answers: dict[str, UserAnswer] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)


def _state_payload(state: DialogueState) -> dict[str, str]:
    return state.to_dict()


def _question_payload(q: FrictionQuestion) -> dict:
    return {
        "question_id": q.question_id,
        "kind": q.kind,
        "slot": q.slot.name,
        "value": q.value,
        "confidence": round(float(q.confidence), 6),
        "rendered_text": q.rendered_text,
    }


class CreateSessionBody(BaseModel):
    checkpoint_id: str
    thresholds: dict | None = None


class UserTurnBody(BaseModel):
    user_utterance: str
    system_utterance: str = ""
    gold_state: dict | None = None


class ConfirmationsBody(BaseModel):
    answers: list[dict]


def create_app(registry: CheckpointRegistry, runs_dir: str | Path = "runs",
               session_ttl: float | None = 3600.0) -> FastAPI:
    app = FastAPI(title="dstlab session service")
    sessions: dict[str, Session] = {}
    store_lock = threading.Lock()

    @app.middleware("http")
    async def request_logger(request: Request, call_next):
        start = time.monotonic()
        response = await call_next(request)
        logger.info("%s %s -> %d (%.1f ms)", request.method, request.url.path,
                    response.status_code, 1000 * (time.monotonic() - start))
        return response

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    def _evict_idle():
        if session_ttl is None:
            return
        now = time.time()
        with store_lock:
            stale = [sid for sid, s in sessions.items() if now - s.updated_at > session_ttl]
            for sid in stale:
                del sessions[sid]

    def _session(session_id: str) -> Session:
        with store_lock:
            if session_id not in sessions:
                raise ServiceError("unknown_session", f"no session {session_id!r}", status=404)
            return sessions[session_id]

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        _evict_idle()
        model = registry.get(body.checkpoint_id)
        thresholds = Thresholds(**body.thresholds) if body.thresholds else model.thresholds
        session = Session(id=uuid.uuid4().hex, model=model, thresholds=thresholds)
        with store_lock:
            sessions[session.id] = session
        return {
            "session_id": session.id,
            "ontology": model.ontology.to_dict(),
            "thresholds": {"tau_fp": thresholds.tau_fp, "tau_fn": thresholds.tau_fn},
        }

    @app.post("/sessions/{session_id}/user_turn")
    def user_turn(session_id: str, body: UserTurnBody):
        session = _session(session_id)
        with session.lock:
            model = session.model
            gold = DialogueState.from_dict(body.gold_state) if body.gold_state is not None else None
            turn = Turn(system_utterance=body.system_utterance, user_utterance=body.user_utterance,
                        gold_state=gold or DialogueState())
            turns = session.turns + [turn]
            try:
                context = encode_context(turns, model.ontology, model.vocab,
                                         max_len=model.checkpoint.config.max_seq_len - 64)
            except ValueError as exc:
                raise ServiceError("context_overflow", str(exc), status=413)
            decoded, probs = model.decoder.decode(context)
            session.turns = turns
            session.golds.append(gold)
            session.last_decoded = decoded
            session.last_probs = probs
            turn_decode = TurnDecode(session.id, len(turns) - 1, context, decoded, probs,
                                     gold or DialogueState())
            source = CachedValueSource(model.decoder, turn_decode)
            questions = build_questions(decoded, probs, session.thresholds, source, model.ontology)
            session.pending_questions = questions
            session.question_index = {q.question_id: q for q in questions}
            session.answers = {}
            committed = not questions
            if committed:
                session.committed_state = decoded.state
            session.updated_at = time.time()
            payload = {
                "turn_index": len(turns) - 1,
                "predicted_state": _state_payload(decoded.state),
                "slot_probabilities": {
                    slot.name: round(float(probs[model.ontology.index(slot)]), 6)
                    for slot in model.ontology.slots
                },
                "friction_questions": [_question_payload(q) for q in questions],
                "state_committed": committed,
                "committed_state": _state_payload(session.committed_state),
                "truncated": decoded.truncated,
            }
            if gold is not None:
                profile = turn_errors(decoded.state, gold)
                payload["turn_errors"] = {
                    "fp_slots": sorted(s.name for s in profile.fp_slots),
                    "fn_slots": sorted(s.name for s in profile.fn_slots),
                    "value_error_slots": sorted(s.name for s in profile.value_error_slots),
                }
            return payload

    @app.post("/sessions/{session_id}/confirmations")
    def confirmations(session_id: str, body: ConfirmationsBody):
        session = _session(session_id)
        with session.lock:
            fresh = False
            for entry in body.answers:
                qid = entry.get("question_id")
                if qid not in session.question_index:
                    raise ServiceError("unknown_question", f"no pending question {qid!r}")
                if qid in session.answers:
                    continue  # idempotent per question id
                spec = entry.get("answer", {})
                try:
                    session.answers[qid] = UserAnswer(kind=spec.get("kind", ""), value=spec.get("value"))
                except ValueError as exc:
                    raise ServiceError("bad_answer", str(exc))
                fresh = True
            applied = {"removed": [], "added": []}
            if session.answers:
                # Recompute from the decoded turn plus every answer so far;
                # replays and duplicate batches land on the same state.
                result = apply_answers(session.last_decoded, list(session.question_index.values()),
                                       session.answers)
                session.committed_state = result.corrected
                applied = {
                    "removed": [{"slot": s.name, "value": v, "confidence": round(p, 6)}
                                for s, v, p in result.removed],
                    "added": [{"slot": s.name, "value": v, "confidence": round(p, 6), "source": src}
                              for s, v, p, src in result.added],
                }
            if fresh or session.answers:
                session.pending_questions = []
            session.updated_at = time.time()
            return {
                "committed_state": _state_payload(session.committed_state),
                "applied": applied,
                "pending_question_ids": [q.question_id for q in session.pending_questions],
            }

    @app.post("/sessions/{session_id}/thresholds")
    def update_thresholds(session_id: str, body: dict):
        """Retune the session's thresholds; takes effect from the next turn."""
        session = _session(session_id)
        with session.lock:
            try:
                session.thresholds = Thresholds(
                    tau_fp=float(body.get("tau_fp", session.thresholds.tau_fp)),
                    tau_fn=float(body.get("tau_fn", session.thresholds.tau_fn)),
                )
            except (TypeError, ValueError) as exc:
                raise ServiceError("bad_thresholds", str(exc))
            session.updated_at = time.time()
            return {"thresholds": {"tau_fp": session.thresholds.tau_fp,
                                   "tau_fn": session.thresholds.tau_fn}}

    @app.get("/sessions/{session_id}")
    def session_snapshot(session_id: str):
        session = _session(session_id)
        with session.lock:
            return {
                "session_id": session.id,
                "checkpoint_id": session.model.checkpoint_id,
                "thresholds": {"tau_fp": session.thresholds.tau_fp, "tau_fn": session.thresholds.tau_fn},
                "turns": [{"system": t.system_utterance, "user": t.user_utterance} for t in session.turns],
                "committed_state": _state_payload(session.committed_state),
                "predicted_state": _state_payload(session.last_decoded.state) if session.last_decoded else {},
                "pending_questions": [_question_payload(q) for q in session.pending_questions],
                "created_at": session.created_at,
                "updated_at": session.updated_at,
            }

    @app.get("/checkpoints")
    def checkpoints():
        return {"checkpoint_ids": registry.ids()}

    @app.get("/runs")
    def runs():
        return {"runs": list_run_records(runs_dir)}

    @app.get("/runs/{run_id}")
    def run_detail(run_id: str):
        try:
            return load_run_record(runs_dir, run_id).to_dict()
        except FileNotFoundError:
            raise ServiceError("unknown_run", f"no run {run_id!r}", status=404)

    return app
