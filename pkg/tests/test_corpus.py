import json

import pytest

from dstlab.corpus_io import CorpusParseError, corpus_hash, load_corpus, save_corpus
from dstlab.ontology import DialogueState, OntologyViolation, SlotId
from dstlab.synth import SynthConfig, generate_corpus


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(SynthConfig(n_train=12, n_validation=3, n_test=3, seed=5))


def test_native_round_trip_is_identity(tmp_path, small_corpus):
    split = small_corpus["train"]
    path = tmp_path / "train.json"
    save_corpus(split, path)
    loaded = load_corpus(path)
    assert loaded.name == split.name
    assert corpus_hash(loaded) == corpus_hash(split)
    save_corpus(loaded, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_empty_dialogue_list_loads(tmp_path):
    payload = {
        "split": "test",
        "ontology": {"slots": [{"domain": "hotel", "slot": "area", "values": ["west"]}]},
        "dialogues": [],
    }
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(payload))
    split = load_corpus(path)
    assert len(split.dialogues) == 0


def test_cumulative_states_are_preserved_verbatim(tmp_path):
    payload = {
        "ontology": {"slots": [
            {"domain": "hotel", "slot": "area", "values": ["west", "east"]},
            {"domain": "hotel", "slot": "stars", "values": ["2"]},
        ]},
        "dialogues": [{"id": "d0", "turns": [
            {"system": "", "user": "two stars", "state": {"hotel-stars": "2"}},
            {"system": "ok", "user": "west side", "state": {"hotel-stars": "2", "hotel-area": "west"}},
        ]}],
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(payload))
    split = load_corpus(path)
    turns = split.dialogues[0].turns
    assert turns[0].gold_state == DialogueState({SlotId("hotel", "stars"): "2"})
    assert turns[1].gold_state.pairs == {
        SlotId("hotel", "stars"): "2", SlotId("hotel", "area"): "west",
    }


def test_unknown_slot_is_reported_with_location(tmp_path):
    payload = {
        "ontology": {"slots": [{"domain": "hotel", "slot": "area", "values": ["west"]}]},
        "dialogues": [{"id": "dlg7", "turns": [
            {"system": "", "user": "hi", "state": {}},
            {"system": "", "user": "x", "state": {"taxi-leaveat": "17:00"}},
        ]}],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(OntologyViolation) as err:
        load_corpus(path)
    assert err.value.dialogue_id == "dlg7"
    assert err.value.turn_index == 1
    assert err.value.slot_name == "taxi-leaveat"


def test_malformed_file_raises_parse_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(CorpusParseError):
        load_corpus(path)
    path2 = tmp_path / "missing.json"
    path2.write_text(json.dumps({"dialogues": []}))
    with pytest.raises(CorpusParseError):
        load_corpus(path2)


def _multiwoz_style_payload(n_dialogues: int, total_turns: int) -> list:
    dialogues = []
    remaining = total_turns
    for i in range(n_dialogues):
        quota = remaining - (n_dialogues - i - 1)
        n_turns = min(max(1, total_turns // n_dialogues + (1 if i < total_turns % n_dialogues else 0)), quota)
        remaining -= n_turns
        turns = []
        for t in range(n_turns):
            turns.append({
                "system_transcript": "" if t == 0 else "how can i help",
                "transcript": f"utterance {t}",
                "belief_state": [{"act": "inform", "slots": [["hotel-area", "west"]]}] if t else [],
            })
        dialogues.append({"dialogue_idx": f"MUL{i:04d}", "dialogue": turns})
    return dialogues


def test_multiwoz_style_counts_match(tmp_path):
    payload = _multiwoz_style_payload(999, 7368)
    path = tmp_path / "mwoz.json"
    path.write_text(json.dumps(payload))
    split = load_corpus(path, format="multiwoz_json", split="test")
    assert len(split.dialogues) == 999
    assert split.n_turns == 7368


def test_multiwoz_none_annotations_mean_absent(tmp_path):
    payload = [{
        "dialogue_idx": "d",
        "dialogue": [{
            "system_transcript": "",
            "transcript": "hello",
            "belief_state": [
                {"act": "inform", "slots": [["hotel-area", "none"]]},
                {"act": "inform", "slots": [["hotel-stars", "2"]]},
            ],
        }],
    }]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(payload))
    split = load_corpus(path, format="multiwoz_json")
    state = split.dialogues[0].turns[0].gold_state
    assert SlotId("hotel", "area") not in state
    assert state.get(SlotId("hotel", "stars")) == "2"


def test_snips_style_single_turn(tmp_path):
    payload = [
        {"id": "ap_311", "intent": "AddToPlaylist", "text": "Add brad kane to the Pumping Iron soundtrack.",
         "slots": {"artist": "brad kane", "playlist": "Pumping Iron"}},
        {"id": "gw_1808", "intent": "GetWeather", "text": "Will there be sun around here?",
         "slots": {"condition_description": "sun"}},
    ]
    path = tmp_path / "snips.json"
    path.write_text(json.dumps(payload))
    split = load_corpus(path, format="snips_json")
    assert all(len(d.turns) == 1 for d in split.dialogues)
    first = split.dialogues[0].turns[0].gold_state
    assert first.get(SlotId("addtoplaylist", "artist")) == "brad kane"
    assert first.get(SlotId("addtoplaylist", "playlist")) == "pumping iron"
