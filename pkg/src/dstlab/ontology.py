"""Slot ontology and dialogue data model.

Slots are named ``domain-slot`` (lowercase). An :class:`Ontology` fixes a
total order over its slots; that order defines the index of every per-slot
vector (labels, probabilities) used elsewhere, so it is serialized together
with the slots and must never drift between runs.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

DONTCARE = "dontcare"

_WS = re.compile(r"\s+")
_IDENT = re.compile(r"^[a-z0-9_][a-z0-9_']*$")


def normalize_value(value: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return _WS.sub(" ", value.strip().lower())


@dataclass(frozen=True, order=True)
class SlotId:
    """A ``domain-slot`` identifier. The domain part never contains ``-``."""

    domain: str
    slot: str

    def __post_init__(self):
        if not self.domain or not self.slot:
            raise ValueError("slot id parts must be nonempty")
        if "-" in self.domain:
            raise ValueError(f"domain {self.domain!r} must not contain '-'")
        for part in (self.domain, self.slot):
            if part != part.lower() or part.strip() != part:
                raise ValueError(f"slot id part {part!r} must be lowercase with no surrounding space")

    @property
    def name(self) -> str:
        return f"{self.domain}-{self.slot}"

    @classmethod
    def parse(cls, name: str) -> "SlotId":
        domain, sep, slot = name.strip().lower().partition("-")
        if not sep:
            raise ValueError(f"slot name {name!r} is not of the form 'domain-slot'")
        return cls(domain, slot)

    def __str__(self) -> str:
        return self.name


class Ontology:
    """Ordered slot set with per-slot value vocabularies.

    ``values`` maps each slot to a tuple of admissible values, or ``None``
    for open (free-text) slots. ``dontcare`` is admissible for every slot in
    addition to its listed values.
    """

    def __init__(self, values: dict[SlotId, tuple[str, ...] | None]):
        if not values:
            raise ValueError("ontology needs at least one slot")
        self.slots: tuple[SlotId, ...] = tuple(sorted(values, key=lambda s: s.name))
        self.values: dict[SlotId, tuple[str, ...] | None] = {
            s: (None if values[s] is None else tuple(normalize_value(v) for v in values[s]))
            for s in self.slots
        }
        self._index = {s: i for i, s in enumerate(self.slots)}
        self._by_name = {s.name: s for s in self.slots}
        if len(self._by_name) != len(self.slots):
            raise ValueError("duplicate slot names in ontology")

    def __len__(self) -> int:
        return len(self.slots)

    def __contains__(self, slot: SlotId) -> bool:
        return slot in self._index

    def index(self, slot: SlotId) -> int:
        return self._index[slot]

    def by_name(self, name: str) -> SlotId | None:
        return self._by_name.get(name)

    def admissible(self, slot: SlotId, value: str) -> bool:
        vocab = self.values.get(slot)
        return vocab is None or value == DONTCARE or value in vocab

    def to_dict(self) -> dict:
        return {
            "slots": [
                {"domain": s.domain, "slot": s.slot,
                 "values": list(v) if (v := self.values[s]) is not None else None}
                for s in self.slots
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ontology":
        return cls({
            SlotId(e["domain"], e["slot"]): (None if e.get("values") is None else tuple(e["values"]))
            for e in d["slots"]
        })

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class DialogueState:
    """Immutable slot→value map with normalized values."""

    __slots__ = ("_pairs",)

    def __init__(self, pairs: dict[SlotId, str] | None = None):
        normalized = {}
        for slot, value in (pairs or {}).items():
            norm = normalize_value(value)
            if not norm:
                raise ValueError(f"empty value for slot {slot}")
            normalized[slot] = norm
        self._pairs = normalized

    @property
    def pairs(self) -> dict[SlotId, str]:
        return dict(self._pairs)

    def get(self, slot: SlotId) -> str | None:
        return self._pairs.get(slot)

    def slots(self) -> set[SlotId]:
        return set(self._pairs)

    def with_pair(self, slot: SlotId, value: str) -> "DialogueState":
        pairs = dict(self._pairs)
        pairs[slot] = value
        return DialogueState(pairs)

    def without_slot(self, slot: SlotId) -> "DialogueState":
        pairs = dict(self._pairs)
        pairs.pop(slot, None)
        return DialogueState(pairs)

    def items_canonical(self, ontology: Ontology) -> list[tuple[SlotId, str]]:
        return sorted(self._pairs.items(), key=lambda kv: ontology.index(kv[0]))

    def to_dict(self) -> dict[str, str]:
        return {slot.name: value for slot, value in sorted(self._pairs.items(), key=lambda kv: kv[0].name)}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "DialogueState":
        return cls({SlotId.parse(name): value for name, value in d.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, DialogueState) and self._pairs == other._pairs

    def __hash__(self) -> int:
        return hash(frozenset(self._pairs.items()))

    def __len__(self) -> int:
        return len(self._pairs)

    def __contains__(self, slot: SlotId) -> bool:
        return slot in self._pairs

    def __repr__(self) -> str:
        inner = ", ".join(f"{s.name}: {v}" for s, v in sorted(self._pairs.items(), key=lambda kv: kv[0].name))
        return "{" + inner + "}"


EMPTY_STATE = DialogueState()


@dataclass(frozen=True)
class Turn:
    """One system/user exchange. ``gold_state`` is the cumulative state after the user utterance."""

    system_utterance: str
    user_utterance: str
    gold_state: DialogueState


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"dialogue {self.id!r} has no turns")


@dataclass(frozen=True)
class CorpusSplit:
    name: str
    dialogues: tuple[Dialogue, ...]
    ontology: Ontology

    def __post_init__(self):
        if self.name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split name {self.name!r}")

    @property
    def n_turns(self) -> int:
        return sum(len(d.turns) for d in self.dialogues)

    def iter_turns(self):
        """Yield (dialogue, turn_index, turn) over the whole split."""
        for dialogue in self.dialogues:
            for t, turn in enumerate(dialogue.turns):
                yield dialogue, t, turn


class OntologyViolation(ValueError):
    """A state references a slot outside the declared ontology."""

    def __init__(self, slot_name: str, dialogue_id: str, turn_index: int):
        super().__init__(f"slot {slot_name!r} not in ontology (dialogue {dialogue_id!r}, turn {turn_index})")
        self.slot_name = slot_name
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index


def validate_split(split: CorpusSplit) -> None:
    """Check every gold state references only ontology slots."""
    for dialogue, t, turn in split.iter_turns():
        for slot in turn.gold_state.slots():
            if slot not in split.ontology:
                raise OntologyViolation(slot.name, dialogue.id, t)


def slot_labels(state: DialogueState, ontology: Ontology):
    """0/1 vector over the ontology's slot order; 1 iff the slot is filled (``dontcare`` counts)."""
    import numpy as np

    labels = np.zeros(len(ontology), dtype=np.float64)
    for slot in state.slots():
        labels[ontology.index(slot)] = 1.0
    return labels
