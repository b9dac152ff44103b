"""Cross-stack check: the console's exported transcript loads as a native
corpus with no diagnostics. The artifact is produced by the frontend test
suite (frontend/tests/session.test.ts); this module skips when the secondary
component has not been built."""

from pathlib import Path

import pytest

from dstlab.corpus_io import load_corpus
from dstlab.ontology import SlotId

EXPORT_PATH = Path(__file__).resolve().parent.parent / "frontend" / "test_artifacts" / "export_sample.json"


@pytest.mark.skipif(not EXPORT_PATH.exists(), reason="console export artifact not built")
def test_console_export_round_trips_through_loader():
    split = load_corpus(EXPORT_PATH)  # raises on any schema or ontology problem
    assert split.name == "test"
    assert len(split.dialogues) == 1
    dialogue = split.dialogues[0]
    assert len(dialogue.turns) == 2
    first, second = dialogue.turns
    assert first.gold_state.pairs == {
        SlotId("hotel", "area"): "south",
        SlotId("hotel", "stars"): "2",
        SlotId("hotel", "parking"): "yes",
    }
    assert second.gold_state.pairs == {
        SlotId("hotel", "area"): "south",
        SlotId("hotel", "parking"): "yes",
    }
    for turn in dialogue.turns:
        for slot in turn.gold_state.slots():
            assert slot in split.ontology
