import numpy as np
import pytest

from dstlab import model as M
from dstlab.codec import build_vocab
from dstlab.ontology import CorpusSplit, Dialogue, DialogueState, Ontology, SlotId, Turn
from dstlab.training import TrainingConfig, train

AREAS = ("north", "south", "east", "west", "centre")


def _micro_corpus() -> CorpusSplit:
    """Ten two-turn dialogues over three slots. Half mention parking in the
    opening turn, so the serialized pattern `area , parking : yes` itself is
    memorized; parking is only ever 'yes'."""
    ontology = Ontology({
        SlotId("hotel", "area"): AREAS,
        SlotId("hotel", "parking"): ("yes", "no"),
        SlotId("hotel", "stars"): tuple(str(i) for i in range(4)),
    })
    area_slot = SlotId("hotel", "area")
    parking = SlotId("hotel", "parking")
    stars = SlotId("hotel", "stars")
    dialogues = []
    for i in range(10):
        area = AREAS[i % len(AREAS)]
        if i % 2 == 0:
            first = DialogueState({area_slot: area})
            second = DialogueState({area_slot: area, parking: "yes"})
            turns = (
                Turn("", f"a hotel in the {area}", first),
                Turn("sure .", "i need parking", second),
            )
        else:
            first = DialogueState({area_slot: area, parking: "yes"})
            n_stars = str(i % 4)
            second = DialogueState({area_slot: area, parking: "yes", stars: n_stars})
            turns = (
                Turn("", f"a hotel in the {area} with parking", first),
                Turn("sure .", f"rated {n_stars} stars", second),
            )
        dialogues.append(Dialogue(id=f"micro_{i}", turns=turns))
    return CorpusSplit(name="train", dialogues=tuple(dialogues), ontology=ontology)


@pytest.fixture(scope="session")
def memorized_bundle(tmp_path_factory):
    """A tiny model trained to reproduce the micro corpus exactly."""
    split = _micro_corpus()
    vocab = build_vocab(split)
    config = M.ModelConfig(vocab_size=len(vocab), n_slots=len(split.ontology),
                           d_model=32, n_layers=2, n_heads=2, max_seq_len=96,
                           dropout_rate=0.0, dtype="float32")
    tc = TrainingConfig(lambda_weight=0.25, learning_rate=3e-3, epochs=120, batch_size=5,
                        seed=0, checkpoint_dir=str(tmp_path_factory.mktemp("memorized")),
                        weight_decay=0.0)
    result = train(config, tc, split, split, vocab)
    rng = np.random.default_rng(0)
    return {"split": split, "vocab": vocab, "result": result, "ontology": split.ontology}
