import json

import httpx
import numpy as np
import pytest

from dstlab.correction import Thresholds, self_correct
from dstlab.friction import (
    AGREE,
    DELETE,
    DISAGREE,
    KIND_FN,
    KIND_FP,
    UPDATE,
    ExternalClientSimulator,
    FrictionQuestion,
    NoisySimulator,
    OracleSimulator,
    UserAnswer,
    apply_answers,
    build_questions,
    oracle_answer,
    parse_reply,
)
from dstlab.metrics import turn_errors
from dstlab.ontology import DialogueState, SlotId

from .fixtures_correction import CASES_BY_NAME, TRAVEL_ONTOLOGY


def test_user_answer_validation():
    with pytest.raises(ValueError):
        UserAnswer("maybe")
    with pytest.raises(ValueError):
        UserAnswer.update_to("   ")
    assert UserAnswer.update_to(" West ").value == "west"


def test_noop_thresholds_yield_no_questions():
    case = CASES_BY_NAME["both_directions_in_one_turn"]
    questions = build_questions(case.input_state(), case.probs_vector(), Thresholds(0.0, 1.0),
                                case.value_source(), case.ontology)
    assert questions == []


def test_question_set_on_mixed_fixture():
    """Low-confidence kept pair asked first, then the missing-slot candidate
    with its generated value."""
    case = CASES_BY_NAME["both_directions_in_one_turn"]
    questions = build_questions(case.input_state(), case.probs_vector(), case.thresholds,
                                case.value_source(), case.ontology)
    assert len(questions) == 2
    fp, fn = questions
    assert fp.kind == KIND_FP and fp.slot.name == "hotel-type" and fp.confidence == pytest.approx(0.06)
    assert fn.kind == KIND_FN and fn.slot.name == "hotel-name"
    assert fn.value == "finches bed and breakfast" and fn.confidence == pytest.approx(0.72)
    assert "hotel-type" in fp.rendered_text and "Agree" in fp.rendered_text
    assert "finches bed and breakfast" in fn.rendered_text
    assert [q.question_id for q in questions] == ["q0", "q1"]


def test_candidates_equal_threshold_filters_on_random_instances():
    rng = np.random.default_rng(5)
    ontology = TRAVEL_ONTOLOGY
    for _ in range(300):
        pairs = {s: "v" for s in ontology.slots if rng.random() < 0.5}
        state = DialogueState(pairs)
        probs = rng.random(len(ontology))
        thresholds = Thresholds(float(rng.random() * 0.5), float(0.5 + rng.random() * 0.5))
        values = {s: ("x" if rng.random() < 0.7 else None) for s in ontology.slots}
        questions = build_questions(state, probs, thresholds, lambda s: values[s], ontology)
        expected_fp = {s for s in pairs if probs[ontology.index(s)] < thresholds.tau_fp}
        expected_fn = {s for s in ontology.slots
                       if s not in pairs and probs[ontology.index(s)] >= thresholds.tau_fn
                       and values[s] is not None}
        assert {q.slot for q in questions if q.kind == KIND_FP} == expected_fp
        assert {q.slot for q in questions if q.kind == KIND_FN} == expected_fn


def test_apply_answers_rules():
    case = CASES_BY_NAME["both_directions_in_one_turn"]
    questions = build_questions(case.input_state(), case.probs_vector(), case.thresholds,
                                case.value_source(), case.ontology)
    fp, fn = questions
    # agree everywhere: the missing pair joins the kept ones
    result = apply_answers(case.input_state(), questions,
                           {fp.question_id: UserAnswer.agree(), fn.question_id: UserAnswer.agree()})
    assert result.corrected.get(fp.slot) == "hotel"
    assert result.corrected.get(fn.slot) == "finches bed and breakfast"
    # delete removes, disagree skips
    result = apply_answers(case.input_state(), questions,
                           {fp.question_id: UserAnswer.delete(), fn.question_id: UserAnswer.disagree()})
    assert fp.slot not in result.corrected
    assert fn.slot not in result.corrected
    # update replaces the kept value
    result = apply_answers(case.input_state(), questions,
                           {fp.question_id: UserAnswer.update_to("guest house")})
    assert result.corrected.get(fp.slot) == "guest house"
    # unanswered leaves the prediction untouched
    result = apply_answers(case.input_state(), questions, {})
    assert result.corrected == case.input_state()


def test_oracle_answers_confusion_table():
    gold = DialogueState.from_dict({"hotel-area": "west", "hotel-stars": "2"})
    q_fp_exact = FrictionQuestion("q0", KIND_FP, SlotId.parse("hotel-area"), "west", 0.05, "")
    q_fp_wrong_value = FrictionQuestion("q1", KIND_FP, SlotId.parse("hotel-stars"), "4", 0.05, "")
    q_fp_not_in_gold = FrictionQuestion("q2", KIND_FP, SlotId.parse("hotel-type"), "hotel", 0.05, "")
    q_fn_exact = FrictionQuestion("q3", KIND_FN, SlotId.parse("hotel-stars"), "2", 0.9, "")
    q_fn_wrong = FrictionQuestion("q4", KIND_FN, SlotId.parse("hotel-name"), "finch lodge", 0.9, "")
    assert oracle_answer(gold, q_fp_exact).kind == AGREE
    answer = oracle_answer(gold, q_fp_wrong_value)
    assert answer.kind == UPDATE and answer.value == "2"
    assert oracle_answer(gold, q_fp_not_in_gold).kind == DELETE
    assert oracle_answer(gold, q_fn_exact).kind == AGREE
    assert oracle_answer(gold, q_fn_wrong).kind == DISAGREE


def test_binary_only_oracle_never_updates():
    gold = DialogueState.from_dict({"hotel-stars": "2"})
    question = FrictionQuestion("q0", KIND_FP, SlotId.parse("hotel-stars"), "4", 0.05, "")
    answer = oracle_answer(gold, question, binary_only=True)
    assert answer.kind == DISAGREE


def test_noisy_simulator_with_zero_rate_equals_oracle():
    gold = DialogueState.from_dict({"hotel-area": "west"})
    questions = [
        FrictionQuestion("q0", KIND_FP, SlotId.parse("hotel-area"), "west", 0.04, ""),
        FrictionQuestion("q1", KIND_FN, SlotId.parse("hotel-stars"), "2", 0.9, ""),
    ]
    oracle = OracleSimulator()
    noisy = NoisySimulator(0.0, np.random.default_rng(0))
    for q in questions:
        assert noisy.answer(gold, q) == oracle.answer(gold, q)
    flipped = NoisySimulator(1.0, np.random.default_rng(0))
    for q in questions:
        assert flipped.answer(gold, q) != oracle.answer(gold, q)


def test_oracle_applied_answers_never_hurt_and_beat_self_correction():
    """Per-turn error counts after oracle-answered friction are no worse than
    before, and at least as good as plain self-correction."""
    rng = np.random.default_rng(9)
    ontology = TRAVEL_ONTOLOGY
    oracle = OracleSimulator()
    improved = 0
    for _ in range(500):
        pred_pairs = {s: str(rng.integers(0, 3)) for s in ontology.slots if rng.random() < 0.4}
        gold_pairs = {s: str(rng.integers(0, 3)) for s in ontology.slots if rng.random() < 0.4}
        state = DialogueState(pred_pairs)
        gold = DialogueState(gold_pairs)
        probs = rng.random(len(ontology))
        thresholds = Thresholds(0.3, 0.6)
        values = {s: (str(rng.integers(0, 3)) if rng.random() < 0.8 else None) for s in ontology.slots}
        source = lambda s: values[s]
        questions = build_questions(state, probs, thresholds, source, ontology)
        answers = oracle.answer_all(gold, questions)
        user_state = apply_answers(state, questions, answers).corrected
        self_state = self_correct(state, probs, thresholds, source, ontology).corrected

        def errors(s):
            profile = turn_errors(s, gold)
            return len(profile.fp_slots) + len(profile.fn_slots) + len(profile.value_error_slots)

        assert errors(user_state) <= errors(state)
        if self_state == gold:
            assert user_state == gold
        improved += errors(user_state) < errors(state)
    assert improved > 50


def test_parse_reply_matcher():
    assert parse_reply("Agree").kind == AGREE
    assert parse_reply("  NOT AGREE ").kind == DISAGREE
    assert parse_reply("Not Agree: Delete").kind == DELETE
    assert parse_reply("not agree: update to [grand hotel]") == UserAnswer.update_to("grand hotel")
    assert parse_reply("Update to 19:00").value == "19:00"
    assert parse_reply("hmm let me think") is None
    assert parse_reply("") is None
    assert parse_reply("I disagree with that") .kind == DISAGREE


def _mock_client(handler):
    transport = httpx.MockTransport(handler)
    return httpx.Client(transport=transport)


def test_external_client_parses_json_reply():
    def handler(request):
        body = json.loads(request.content)
        assert "question_text" in body and "history" in body
        return httpx.Response(200, json={"reply": "Not Agree: Delete"})

    sim = ExternalClientSimulator("http://sim.test/answer", client=_mock_client(handler))
    question = FrictionQuestion("q0", KIND_FP, SlotId.parse("hotel-area"), "west", 0.02, "is it west?")
    answer = sim.answer(["u: hi"], question)
    assert answer.kind == DELETE


def test_external_client_accepts_plain_text_and_retries():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            raise httpx.ConnectError("boom", request=request)
        return httpx.Response(200, text="Agree")

    sim = ExternalClientSimulator("http://sim.test/answer", client=_mock_client(handler))
    question = FrictionQuestion("q0", KIND_FN, SlotId.parse("hotel-area"), "west", 0.9, "west?")
    answer = sim.answer([], question)
    assert answer.kind == AGREE
    assert calls["n"] == 2


def test_external_client_unparseable_reply_is_unanswered():
    def handler(request):
        return httpx.Response(200, text="lorem ipsum")

    sim = ExternalClientSimulator("http://sim.test/answer", client=_mock_client(handler))
    question = FrictionQuestion("q0", KIND_FN, SlotId.parse("hotel-area"), "west", 0.9, "west?")
    assert sim.answer([], question) is None


def test_external_client_gives_up_after_second_failure():
    def handler(request):
        raise httpx.ConnectError("down", request=request)

    sim = ExternalClientSimulator("http://sim.test/answer", client=_mock_client(handler))
    question = FrictionQuestion("q0", KIND_FN, SlotId.parse("hotel-area"), "west", 0.9, "west?")
    assert sim.answer([], question) is None
