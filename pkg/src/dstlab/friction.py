"""Friction questions over uncertain slots, and user simulators to answer them.

A turn's question set covers both error directions: predicted pairs whose
slot probability fell below the false-positive threshold (asked first, in
prediction order) and missing slots above the false-negative threshold that
produced a generated value (canonical order). Confirmed outcomes are folded
back into the state; anything unanswered leaves the prediction untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .correction import SOURCE_USER, CorrectionResult, Thresholds
from .decoding import DecodedState
from .ontology import DialogueState, Ontology, SlotId, normalize_value

logger = logging.getLogger(__name__)

KIND_FP = "confirm_fp_candidate"
KIND_FN = "confirm_fn_candidate"

AGREE = "agree"
DISAGREE = "disagree"
DELETE = "delete"
UPDATE = "update"


@dataclass(frozen=True)
class FrictionQuestion:
    question_id: str
    kind: str
    slot: SlotId
    value: str
    confidence: float
    rendered_text: str


@dataclass(frozen=True)
class UserAnswer:
    kind: str
    value: str | None = None

    def __post_init__(self):
        if self.kind not in (AGREE, DISAGREE, DELETE, UPDATE):
            raise ValueError(f"unknown answer kind {self.kind!r}")
        if self.kind == UPDATE:
            if not self.value or not normalize_value(self.value):
                raise ValueError("update answers need a nonempty value")
            object.__setattr__(self, "value", normalize_value(self.value))

    @classmethod
    def agree(cls):
        return cls(AGREE)

    @classmethod
    def disagree(cls):
        return cls(DISAGREE)

    @classmethod
    def delete(cls):
        return cls(DELETE)

    @classmethod
    def update_to(cls, value: str):
        return cls(UPDATE, value)


def render_question(kind: str, slot: SlotId, value: str) -> str:
    if kind == KIND_FP:
        return (
            f"I may have captured something incorrectly. I currently have {slot.name} = \"{value}\". "
            f"Reply \"Agree\" to keep it, \"Not Agree: Update to [new value]\" to fix the value, "
            f"or \"Not Agree: Delete\" if {slot.name} should not be tracked at all."
        )
    return (
        f"I may have missed something you mentioned. Should the {slot.name} be \"{value}\"? "
        f"Reply \"Agree\" if that is right, or \"Not Agree\" if it is not."
    )


def build_questions(
    b,
    probs: np.ndarray,
    thresholds: Thresholds,
    value_source,
    ontology: Ontology,
) -> list[FrictionQuestion]:
    """Candidate questions for one turn; empty at the no-op thresholds."""
    state = b.state if isinstance(b, DecodedState) else b
    questions: list[FrictionQuestion] = []
    for slot, value in state.pairs.items():
        p = float(probs[ontology.index(slot)])
        if p < thresholds.tau_fp:
            questions.append(FrictionQuestion(
                question_id=f"q{len(questions)}", kind=KIND_FP, slot=slot, value=value,
                confidence=p, rendered_text=render_question(KIND_FP, slot, value),
            ))
    present = state.slots()
    for slot in ontology.slots:
        if slot in present:
            continue
        p = float(probs[ontology.index(slot)])
        if p < thresholds.tau_fn:
            continue
        try:
            value = value_source(slot)
        except Exception:
            logger.exception("value source failed for %s; no question asked", slot.name)
            value = None
        if value is None:
            continue
        questions.append(FrictionQuestion(
            question_id=f"q{len(questions)}", kind=KIND_FN, slot=slot, value=value,
            confidence=p, rendered_text=render_question(KIND_FN, slot, value),
        ))
    return questions


def apply_answers(
    b,
    questions: list[FrictionQuestion],
    answers: dict[str, UserAnswer],
) -> CorrectionResult:
    """Fold confirmed outcomes into the state. Keep on agree, remove on
    delete (or disagree, for presence questions), replace on update; missing
    answers change nothing."""
    state = b.state if isinstance(b, DecodedState) else b
    pairs = state.pairs
    result = CorrectionResult(corrected=state)
    for q in questions:
        answer = answers.get(q.question_id)
        if answer is None:
            continue
        if q.kind == KIND_FP:
            if answer.kind in (DELETE, DISAGREE):
                if q.slot in pairs:
                    del pairs[q.slot]
                    result.removed.append((q.slot, q.value, q.confidence))
            elif answer.kind == UPDATE:
                pairs[q.slot] = answer.value
        else:
            result.cost_incurred = True
            if answer.kind == AGREE:
                pairs[q.slot] = q.value
                result.added.append((q.slot, q.value, q.confidence, SOURCE_USER))
    if not result.cost_incurred:
        result.cost_incurred = any(q.kind == KIND_FN for q in questions)
    result.corrected = DialogueState(pairs)
    return result


def oracle_answer(gold: DialogueState, question: FrictionQuestion, binary_only: bool = False) -> UserAnswer:
    """Ideal answer given the reference state. ``binary_only`` restricts
    presence-question replies to agree/disagree and never updates values."""
    gold_value = gold.get(question.slot)
    if question.kind == KIND_FP:
        if gold_value == question.value:
            return UserAnswer.agree()
        if gold_value is None or binary_only:
            return UserAnswer.delete() if gold_value is None else UserAnswer.disagree()
        return UserAnswer.update_to(gold_value)
    return UserAnswer.agree() if gold_value == question.value else UserAnswer.disagree()


class OracleSimulator:
    """Answers from the gold state; the idealized stand-in for a human."""

    def __init__(self, binary_only: bool = False):
        self.binary_only = binary_only

    def answer(self, gold: DialogueState, question: FrictionQuestion) -> UserAnswer:
        return oracle_answer(gold, question, binary_only=self.binary_only)

    def answer_all(self, gold: DialogueState, questions: list[FrictionQuestion]) -> dict[str, UserAnswer]:
        return {q.question_id: self.answer(gold, q) for q in questions}


class NoisySimulator(OracleSimulator):
    """Oracle that garbles each answer with probability epsilon."""

    def __init__(self, epsilon: float, rng: np.random.Generator, binary_only: bool = False):
        super().__init__(binary_only=binary_only)
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        self.rng = rng

    def answer(self, gold: DialogueState, question: FrictionQuestion) -> UserAnswer:
        truth = super().answer(gold, question)
        if self.epsilon == 0.0 or self.rng.random() >= self.epsilon:
            return truth
        if question.kind == KIND_FN:
            return UserAnswer.disagree() if truth.kind == AGREE else UserAnswer.agree()
        return UserAnswer.delete() if truth.kind == AGREE else UserAnswer.agree()


def parse_reply(text: str) -> UserAnswer | None:
    """Tolerant matcher for free-text replies; None when nothing matches."""
    t = normalize_value(text)
    if not t:
        return None
    if "update to" in t:
        value = t.split("update to", 1)[1].strip(" .!?\"'[]")
        return UserAnswer.update_to(value) if value else None
    if "delete" in t:
        return UserAnswer.delete()
    if "not agree" in t or "disagree" in t:
        return UserAnswer.disagree()
    if "agree" in t:
        return UserAnswer.agree()
    return None


class ExternalClientSimulator:
    """Delegates answers to a chat-completion style HTTP endpoint.

    Request: ``{"history": [...], "question_text": ...}``; the reply may be a
    JSON object with a ``reply`` field or a bare text body. One retry on
    transport errors; unparseable replies count as unanswered.
    """

    def __init__(self, endpoint: str, client=None, timeout: float = 10.0):
        import httpx

        self.endpoint = endpoint
        self.client = client or httpx.Client(timeout=timeout)

    def answer(self, history: list[str], question: FrictionQuestion) -> UserAnswer | None:
        payload = {"history": history, "question_text": question.rendered_text}
        reply = None
        for attempt in range(2):
            try:
                response = self.client.post(self.endpoint, json=payload)
                response.raise_for_status()
                try:
                    body = response.json()
                    reply = body.get("reply") if isinstance(body, dict) else str(body)
                except ValueError:
                    reply = response.text
                break
            except Exception:
                if attempt == 1:
                    logger.exception("external simulator unreachable; question unanswered")
                    return None
        if reply is None:
            return None
        answer = parse_reply(str(reply))
        if answer is None:
            logger.warning("unparseable simulator reply %r; question unanswered", reply)
        return answer
