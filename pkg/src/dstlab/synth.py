"""Seeded template-based corpus generator.

Dialogues are assembled from a per-domain slot/value library plus phrase
templates. Gold states are correct by construction: a pair enters (or
changes in) the cumulative state exactly at the turn whose user utterance
realizes it, either with the value verbatim or with one of the phrases
returned by :func:`value_evidence_phrases`. Everything is driven by one
``numpy`` generator, so a fixed :class:`SynthConfig` reproduces the corpus
byte for byte.

Difficulty dials: ``ambiguity_rate`` drops the domain marker from utterances
in multi-domain dialogues (attribution must come from context),
``distractor_rate`` inserts chatter that mentions value words outside any
slot pattern, and ``overwrite_rate`` forces value revisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ontology import DONTCARE, CorpusSplit, Dialogue, DialogueState, Ontology, SlotId, Turn

_AREAS = ("north", "south", "east", "west", "centre")
_PRICES = ("cheap", "moderate", "expensive")
_DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
_TIMES = ("17:00", "17:15", "17:30", "18:00", "18:15", "18:45", "19:00", "19:45")
_FOODS = ("italian", "chinese", "indian", "british", "thai", "french", "mexican", "japanese", "turkish", "korean")
_TYPES = ("museum", "theatre", "park", "cinema", "college", "pool", "gallery", "boathouse")
_HOTEL_NAMES = ("finch lodge", "river house", "golden crown hotel", "rosewood guest house",
                "the blue boar", "king street inn", "maple court", "station view hotel")
_REST_NAMES = ("golden wok", "bella italia", "the oak table", "spice garden",
               "river terrace", "little saigon", "casa verde", "the black swan")
_ATTR_NAMES = ("city art museum", "old mill park", "grand arcade theatre", "science world",
               "castle green", "botanic gardens", "corn exchange", "round church")
_PLACES = ("cambridge", "london", "norwich", "ely", "peterborough", "stansted")

# (slot, kind, values, open) per domain; order defines which slots a small
# slots_per_domain keeps.
_DOMAIN_LIBRARY: dict[str, list[tuple[str, str, tuple[str, ...], bool]]] = {
    "hotel": [
        ("area", "area", _AREAS, False),
        ("pricerange", "price", _PRICES, False),
        ("stars", "stars", tuple(str(i) for i in range(6)), False),
        ("parking", "binary", ("yes", "no"), False),
        ("bookday", "day", _DAYS, False),
        ("name", "name", _HOTEL_NAMES, False),
    ],
    "restaurant": [
        ("area", "area", _AREAS, False),
        ("food", "food", _FOODS, False),
        ("pricerange", "price", _PRICES, False),
        ("booktime", "time", _TIMES, False),
        ("bookday", "day", _DAYS, False),
        ("name", "name", _REST_NAMES, False),
    ],
    "attraction": [
        ("area", "area", _AREAS, False),
        ("type", "kind", _TYPES, False),
        ("entrancefee", "binary", ("free", "paid"), False),
        ("bookday", "day", _DAYS, False),
        ("name", "name", _ATTR_NAMES, False),
        ("parking", "binary", ("yes", "no"), False),
    ],
    "train": [
        ("destination", "place_to", _PLACES, False),
        ("departure", "place_from", _PLACES, False),
        ("day", "day", _DAYS, False),
        ("leaveat", "time", _TIMES, False),
        ("arriveby", "time", _TIMES, False),
        ("bookpeople", "stars", tuple(str(i) for i in range(1, 7)), False),
    ],
    "taxi": [
        ("destination", "place_to", _PLACES, False),
        ("departure", "place_from", _PLACES, False),
        ("leaveat", "time", _TIMES, False),
        ("arriveby", "time", _TIMES, False),
    ],
}

_INFORM_TEMPLATES: dict[str, tuple[str, ...]] = {
    "area": ("in the {v}", "somewhere in the {v}", "the {v} part of town works"),
    "price": ("in the {v} price range", "something {v}", "a {v} one please"),
    "stars": ("with {v} stars", "rated {v} stars", "a {v} star rating"),
    "day": ("on {v}", "for {v} please", "it will be {v}"),
    "time": ("at {v}", "around {v}", "make it {v}"),
    "food": ("serving {v} food", "{v} cuisine", "somewhere that does {v}"),
    "kind": ("maybe a {v}", "a {v} would be nice", "some kind of {v}"),
    "name": ("called {v}", "the one named {v}", "i heard about {v}"),
    "place_to": ("to {v}", "going to {v}", "headed to {v}"),
    "place_from": ("from {v}", "leaving from {v}", "departing {v}"),
}

# Binary and fee-like slots are realized by phrases that never contain the
# value token itself; the evidence validator consults this table.
_BINARY_PHRASES: dict[tuple[str, str], tuple[str, ...]] = {
    ("parking", "yes"): ("i need parking", "it should include parking"),
    ("parking", "no"): ("i do not need parking", "no parking required"),
    ("entrancefee", "free"): ("it should be free to enter", "no entrance fee please"),
    ("entrancefee", "paid"): ("paid entry is fine", "i do not mind paying to get in"),
}

_DONTCARE_PHRASES: dict[str, tuple[str, ...]] = {
    "area": ("any area is fine", "i do not mind which part of town"),
    "price": ("any price range works", "price does not matter"),
    "stars": ("the star rating does not matter", "any number of stars is fine"),
    "day": ("any day works", "whichever day is fine"),
    "time": ("any time is fine", "whenever works"),
    "food": ("any kind of food is fine", "i will eat anything"),
    "kind": ("any type is fine", "whatever kind you suggest"),
    "name": ("no particular place in mind", "any name will do"),
    "place_to": ("anywhere is fine", "i do not mind the destination"),
    "place_from": ("any starting point works", "i do not mind where it leaves from"),
    "binary": ("either way is fine", "it does not matter"),
}

_OPENERS = ("i am looking for a {d}", "can you find me a {d}", "i need a {d}", "help me book a {d}")
_FOLLOWUP_LEADS = ("also ,", "oh and", "one more thing ,", "and", "it should be")
_OVERWRITE_LEADS = ("actually , make it", "on second thought ,", "wait , change that to", "scratch that ,")
_CHATTER = (
    "thanks a lot you are very helpful",
    "great weather today is it not",
    "sorry i was distracted for a moment",
    "my cat walked over the keyboard just now",
    "this is for a trip with my family",
)
_DISTRACTOR_FRAMES = (
    "my friend will not stop talking about {v} but never mind",
    "someone once told me a story about {v} which is beside the point",
    "forget what i said earlier about {v} that was a joke",
)
_SYSTEM_ACKS = (
    "sure . anything else ?",
    "okay , noted .",
    "got it .",
    "alright .",
)


@dataclass(frozen=True)
class SynthConfig:
    domains: int = 3
    slots_per_domain: int = 4
    value_set_size: int = 6
    n_train: int = 2000
    n_validation: int = 300
    n_test: int = 300
    seed: int = 0
    overwrite_rate: float = 0.25
    dontcare_rate: float = 0.12
    chatter_rate: float = 0.15
    distractor_rate: float = 0.1
    ambiguity_rate: float = 0.35
    multi_domain_rate: float = 0.45
    min_informed_slots: int = 2
    max_informed_slots: int = 3

    def validate(self) -> None:
        if not 1 <= self.domains <= len(_DOMAIN_LIBRARY):
            raise ValueError(f"domains must be in 1..{len(_DOMAIN_LIBRARY)}")
        if self.slots_per_domain < 2:
            raise ValueError("need at least 2 slots per domain")
        if self.value_set_size < 1:
            raise ValueError("categorical slots need at least one value")
        if min(self.n_train, self.n_validation, self.n_test) < 1:
            raise ValueError("every split needs at least one dialogue")
        if self.min_informed_slots < 1 or self.max_informed_slots < self.min_informed_slots:
            raise ValueError("bad informed-slot bounds")
        for rate in (self.overwrite_rate, self.dontcare_rate, self.chatter_rate,
                     self.distractor_rate, self.ambiguity_rate, self.multi_domain_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")


def build_ontology(config: SynthConfig) -> Ontology:
    config.validate()
    values: dict[SlotId, tuple[str, ...] | None] = {}
    for domain in sorted(_DOMAIN_LIBRARY)[: config.domains]:
        library = _DOMAIN_LIBRARY[domain][: config.slots_per_domain]
        if len(library) < config.slots_per_domain:
            raise ValueError(f"domain {domain!r} offers only {len(library)} slots")
        for slot_name, kind, vocab, is_open in library:
            take = len(vocab) if kind == "binary" else min(config.value_set_size, len(vocab))
            values[SlotId(domain, slot_name)] = None if is_open else vocab[:take]
    return Ontology(values)


def _slot_meta(config: SynthConfig) -> dict[SlotId, tuple[str, tuple[str, ...]]]:
    meta = {}
    for domain in sorted(_DOMAIN_LIBRARY)[: config.domains]:
        for slot_name, kind, vocab, is_open in _DOMAIN_LIBRARY[domain][: config.slots_per_domain]:
            take = len(vocab) if kind == "binary" else min(config.value_set_size, len(vocab))
            meta[SlotId(domain, slot_name)] = (kind, vocab[:take])
    return meta


def value_evidence_phrases(slot: SlotId, value: str, config: SynthConfig | None = None) -> tuple[str, ...]:
    """Phrases that count as evidence for (slot, value) besides the verbatim value."""
    kind = None
    for domain, entries in _DOMAIN_LIBRARY.items():
        if domain == slot.domain:
            for slot_name, k, _, _ in entries:
                if slot_name == slot.slot:
                    kind = k
    if kind is None:
        return ()
    if value == DONTCARE:
        return _DONTCARE_PHRASES.get(kind, ()) + _DONTCARE_PHRASES["binary"]
    if kind == "binary":
        return _BINARY_PHRASES.get((slot.slot, value), ())
    return ()


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _inform_phrase(rng: np.random.Generator, slot: SlotId, kind: str, value: str) -> str:
    if value == DONTCARE:
        pool = _DONTCARE_PHRASES.get(kind, _DONTCARE_PHRASES["binary"])
        return _pick(rng, pool)
    if kind == "binary":
        return _pick(rng, _BINARY_PHRASES[(slot.slot, value)])
    return _pick(rng, _INFORM_TEMPLATES[kind]).format(v=value)


def _generate_dialogue(rng: np.random.Generator, did: str, config: SynthConfig,
                       meta: dict[SlotId, tuple[str, tuple[str, ...]]]) -> Dialogue:
    domains = sorted({s.domain for s in meta})
    n_dom = 2 if (len(domains) > 1 and rng.random() < config.multi_domain_rate) else 1
    chosen = list(rng.choice(domains, size=n_dom, replace=False))

    # Plan: per domain, an ordered list of (slot, value, is_dontcare) events.
    events: list[tuple[str, SlotId, str]] = []  # (op, slot, value); op in {open, inform, overwrite}
    informed: dict[SlotId, str] = {}
    for pos, domain in enumerate(chosen):
        slots = [s for s in meta if s.domain == domain]
        k = int(rng.integers(config.min_informed_slots, min(config.max_informed_slots, len(slots)) + 1))
        picked = list(rng.choice(len(slots), size=k, replace=False))
        events.append(("open", SlotId(domain, "_"), domain))
        for idx in picked:
            slot = slots[idx]
            kind, vocab = meta[slot]
            if rng.random() < config.dontcare_rate:
                value = DONTCARE
            else:
                value = _pick(rng, vocab)
            events.append(("inform", slot, value))
            informed[slot] = value

    # Optional overwrite of one already-informed non-dontcare slot.
    overwritable = [s for s, v in informed.items() if v != DONTCARE and len(meta[s][1]) > 1]
    if overwritable and rng.random() < config.overwrite_rate:
        slot = overwritable[int(rng.integers(len(overwritable)))]
        kind, vocab = meta[slot]
        alternatives = [v for v in vocab if v != informed[slot]]
        events.append(("overwrite", slot, _pick(rng, alternatives)))

    # Group events into turns (1-2 informs per turn; openers start a turn).
    turn_plans: list[list[tuple[str, SlotId, str]]] = []
    current: list[tuple[str, SlotId, str]] = []
    budget = int(rng.integers(1, 3))
    for event in events:
        if event[0] == "open" and current:
            turn_plans.append(current)
            current, budget = [], int(rng.integers(1, 3))
        current.append(event)
        if sum(1 for e in current if e[0] != "open") >= budget:
            turn_plans.append(current)
            current, budget = [], int(rng.integers(1, 3))
    if current:
        turn_plans.append(current)

    # Render turns; insert chatter after turn 0 with some probability.
    turns: list[Turn] = []
    state: dict[SlotId, str] = {}
    active_domain = chosen[0]
    all_values = sorted({v for _, vocab in meta.values() for v in vocab})
    for t_idx, plan in enumerate(turn_plans):
        if turns and rng.random() < config.chatter_rate:
            if rng.random() < config.distractor_rate:
                frame = _pick(rng, _DISTRACTOR_FRAMES)
                chatter = frame.format(v=_pick(rng, all_values))
            else:
                chatter = _pick(rng, _CHATTER)
            turns.append(Turn(_pick(rng, _SYSTEM_ACKS), chatter, DialogueState(state)))
        fragments: list[str] = []
        for op, slot, value in plan:
            if op == "open":
                active_domain = value
                fragments.append(_pick(rng, _OPENERS).format(d=value))
                continue
            kind, _ = meta[slot]
            phrase = _inform_phrase(rng, slot, kind, value)
            marked = slot.domain != active_domain or (n_dom > 1 and rng.random() >= config.ambiguity_rate)
            if op == "overwrite":
                lead = _pick(rng, _OVERWRITE_LEADS)
                fragments.append(f"{lead} {phrase}" if not marked else f"{lead} for the {slot.domain} {phrase}")
            elif fragments:
                lead = _pick(rng, _FOLLOWUP_LEADS)
                fragments.append(f"{lead} for the {slot.domain} {phrase}" if marked else f"{lead} {phrase}")
            else:
                fragments.append(f"for the {slot.domain} {phrase}" if marked else phrase)
            if slot.domain != active_domain:
                active_domain = slot.domain
            state[slot] = value
        system = "" if not turns else _pick(rng, _SYSTEM_ACKS)
        turns.append(Turn(system, " ".join(fragments), DialogueState(state)))
    return Dialogue(id=did, turns=tuple(turns))


def generate_corpus(config: SynthConfig) -> dict[str, CorpusSplit]:
    """Generate train/validation/test splits plus their shared ontology."""
    config.validate()
    ontology = build_ontology(config)
    meta = _slot_meta(config)
    rng = np.random.default_rng(config.seed)
    splits = {}
    for name, count in (("train", config.n_train), ("validation", config.n_validation), ("test", config.n_test)):
        dialogues = tuple(
            _generate_dialogue(rng, f"{name}_{i:05d}", config, meta) for i in range(count)
        )
        splits[name] = CorpusSplit(name=name, dialogues=dialogues, ontology=ontology)
    return splits
