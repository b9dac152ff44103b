"""Corpus file formats: native JSON plus MultiWOZ/Snips-style ingestion adapters.

Native layout (one split per file)::

    {
      "split": "train",
      "ontology": {"slots": [{"domain": ..., "slot": ..., "values": [...] | null}]},
      "dialogues": [
        {"id": ..., "turns": [{"system": ..., "user": ..., "state": {"domain-slot": "value"}}]}
      ]
    }

The MultiWOZ-style adapter reads the widely used preprocessed shape
(``dialogue_idx`` / ``dialogue`` / ``system_transcript`` / ``transcript`` /
``belief_state`` with ``slots: [[name, value], ...]``); ``none`` or empty
annotations mean slot-absent. The Snips-style adapter reads single-turn
records ``{"id", "intent", "text", "slots": {name: value}}`` and prefixes
slot names with the lowercased intent as the domain. Both adapters derive
the ontology from the data when none is supplied.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .ontology import (
    CorpusSplit,
    Dialogue,
    DialogueState,
    Ontology,
    OntologyViolation,
    SlotId,
    Turn,
    normalize_value,
    validate_split,
)

FORMATS = ("native_json", "multiwoz_json", "snips_json")

_ABSENT = ("", "none", "not mentioned")


class CorpusParseError(ValueError):
    pass


def load_corpus(path: str | Path, format: str = "native_json", split: str | None = None) -> CorpusSplit:
    """Load one split; raises :class:`CorpusParseError` on malformed files and
    :class:`OntologyViolation` when a state references an undeclared slot."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusParseError(f"cannot parse {path}: {exc}") from exc
    if format == "native_json":
        return _load_native(raw, split)
    if format == "multiwoz_json":
        return _load_multiwoz(raw, split or "test")
    if format == "snips_json":
        return _load_snips(raw, split or "test")
    raise CorpusParseError(f"unknown corpus format {format!r}; expected one of {FORMATS}")


def _state_from_mapping(mapping: dict, ontology: Ontology | None, dialogue_id: str, turn_index: int) -> DialogueState:
    pairs = {}
    for name, value in mapping.items():
        try:
            slot = SlotId.parse(name)
        except ValueError as exc:
            raise CorpusParseError(f"bad slot name {name!r} in dialogue {dialogue_id!r}") from exc
        if ontology is not None and slot not in ontology:
            raise OntologyViolation(slot.name, dialogue_id, turn_index)
        pairs[slot] = normalize_value(str(value))
    return DialogueState(pairs)


def _load_native(raw: dict, split: str | None) -> CorpusSplit:
    try:
        ontology = Ontology.from_dict(raw["ontology"])
        name = split or raw.get("split", "train")
        dialogues = []
        for d in raw["dialogues"]:
            turns = tuple(
                Turn(
                    system_utterance=normalize_value(t.get("system", "")),
                    user_utterance=normalize_value(t["user"]),
                    gold_state=_state_from_mapping(t.get("state", {}), ontology, d["id"], i),
                )
                for i, t in enumerate(d["turns"])
            )
            dialogues.append(Dialogue(id=str(d["id"]), turns=turns))
    except (KeyError, TypeError) as exc:
        raise CorpusParseError(f"malformed native corpus: {exc!r}") from exc
    corpus = CorpusSplit(name=name, dialogues=tuple(dialogues), ontology=ontology)
    validate_split(corpus)
    return corpus


def save_corpus(split: CorpusSplit, path: str | Path) -> None:
    """Write native JSON; byte-stable for a given split (sorted keys, fixed indent)."""
    payload = {
        "split": split.name,
        "ontology": split.ontology.to_dict(),
        "dialogues": [
            {
                "id": d.id,
                "turns": [
                    {"system": t.system_utterance, "user": t.user_utterance, "state": t.gold_state.to_dict()}
                    for t in d.turns
                ],
            }
            for d in split.dialogues
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _load_multiwoz(raw: list, split: str) -> CorpusSplit:
    if not isinstance(raw, list):
        raise CorpusParseError("multiwoz-style corpus must be a top-level list of dialogues")
    parsed: list[tuple[str, list[tuple[str, str, dict[SlotId, str]]]]] = []
    observed: dict[SlotId, set[str]] = {}
    try:
        for d in raw:
            did = str(d.get("dialogue_idx") or d["dialogue_id"])
            turns = []
            for t in d["dialogue"]:
                pairs: dict[SlotId, str] = {}
                for entry in t.get("belief_state", []):
                    for name, value in entry.get("slots", []):
                        value = normalize_value(str(value))
                        if value in _ABSENT:
                            continue
                        slot = SlotId.parse(name)
                        pairs[slot] = value
                        observed.setdefault(slot, set()).add(value)
                turns.append((
                    normalize_value(t.get("system_transcript", "")),
                    normalize_value(t["transcript"]),
                    pairs,
                ))
            parsed.append((did, turns))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusParseError(f"malformed multiwoz-style corpus: {exc!r}") from exc
    ontology = Ontology({slot: tuple(sorted(vals)) for slot, vals in observed.items()})
    dialogues = tuple(
        Dialogue(id=did, turns=tuple(Turn(sys, usr, DialogueState(pairs)) for sys, usr, pairs in turns))
        for did, turns in parsed
    )
    return CorpusSplit(name=split, dialogues=dialogues, ontology=ontology)


def _load_snips(raw: list, split: str) -> CorpusSplit:
    if not isinstance(raw, list):
        raise CorpusParseError("snips-style corpus must be a top-level list of utterances")
    parsed = []
    observed: dict[SlotId, set[str]] = {}
    try:
        for i, rec in enumerate(raw):
            domain = normalize_value(rec["intent"]).replace(" ", "_")
            pairs = {}
            for name, value in rec.get("slots", {}).items():
                slot = SlotId(domain, normalize_value(name).replace(" ", "_"))
                value = normalize_value(str(value))
                if value in _ABSENT:
                    continue
                pairs[slot] = value
                observed.setdefault(slot, set()).add(value)
            parsed.append((str(rec.get("id", i)), normalize_value(rec["text"]), pairs))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusParseError(f"malformed snips-style corpus: {exc!r}") from exc
    ontology = Ontology({slot: tuple(sorted(vals)) for slot, vals in observed.items()})
    dialogues = tuple(
        Dialogue(id=rid, turns=(Turn("", text, DialogueState(pairs)),)) for rid, text, pairs in parsed
    )
    return CorpusSplit(name=split, dialogues=dialogues, ontology=ontology)


def corpus_hash(split: CorpusSplit) -> str:
    """Content hash used by run manifests and checkpoint compatibility checks."""
    h = hashlib.sha256()
    h.update(split.ontology.content_hash().encode())
    for d in split.dialogues:
        h.update(d.id.encode())
        for t in d.turns:
            h.update(t.system_utterance.encode())
            h.update(b"\x00")
            h.update(t.user_utterance.encode())
            h.update(json.dumps(t.gold_state.to_dict(), sort_keys=True).encode())
    return h.hexdigest()
