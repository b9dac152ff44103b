"""Word-level tokenizer, vocabulary, and the context/state wire format.

Contexts are laid out as::

    [BOS] <slot names in canonical order> ([ROLE_SYS] sys... [ROLE_USER] user...)* [SEP_CONTEXT]

so the final token is always ``SEP_CONTEXT``; the model reads the slot
classifier's features at that position. States serialize as
``{ slot : value , ... } EOS_STATE`` with structural tokens kept as single
vocabulary entries and slots in canonical ontology order, which makes the
generation target unique and the decode stream trivially parseable.

Slot names enter the vocabulary as single tokens; they are emitted directly
and never pass through the text tokenizer. ``:`` counts as a word character
so clock values like ``17:15`` survive as one token.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .ontology import CorpusSplit, DialogueState, Ontology, SlotId, Turn, normalize_value

PAD, UNK, BOS, EOS_STATE, SEP_CONTEXT, ROLE_SYS, ROLE_USER, BRACE_OPEN, BRACE_CLOSE, COMMA, COLON = range(11)

SPECIAL_TOKENS = (
    "<pad>", "<unk>", "<bos>", "<eos_state>", "<sep_context>",
    "<sys>", "<user>", "<{>", "<}>", "<,>", "<:>",
)

_WORD = re.compile(r"[a-z0-9:_']+|[^\sa-z0-9:_']")


def tokenize(text: str) -> list[str]:
    """Split normalized text into word/punctuation tokens."""
    return _WORD.findall(normalize_value(text))


class Vocabulary:
    """Token table with reserved special ids (specials first, then sorted words)."""

    def __init__(self, words: list[str]):
        self.tokens: list[str] = list(SPECIAL_TOKENS) + list(words)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode_text(self, text: str) -> list[int]:
        return [self.id_of(t) for t in tokenize(text)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.tokens, indent=0) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = json.loads(Path(path).read_text())
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary file does not start with the reserved special tokens")
        return cls(tokens[len(SPECIAL_TOKENS):])

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.tokens).encode()).hexdigest()


def build_vocab(train: CorpusSplit, min_count: int = 1) -> Vocabulary:
    """Frequency-filtered word vocabulary; ontology slot names and all tokens of
    every ontology value (and every gold value) are force-included."""
    if not train.dialogues:
        raise ValueError("cannot build a vocabulary from an empty split")
    counts: dict[str, int] = {}
    for _, _, turn in train.iter_turns():
        for text in (turn.system_utterance, turn.user_utterance):
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
    forced: set[str] = set()
    ontology = train.ontology
    for slot in ontology.slots:
        forced.add(slot.name)
        vocab = ontology.values[slot]
        for value in vocab or ():
            forced.update(tokenize(value))
    forced.add("dontcare")
    for _, _, turn in train.iter_turns():
        for value in turn.gold_state.pairs.values():
            forced.update(tokenize(value))
    words = sorted(forced | {t for t, c in counts.items() if c >= min_count})
    return Vocabulary(words)


@dataclass(frozen=True)
class SerializedContext:
    token_ids: tuple[int, ...]
    turn_index: int

    def __post_init__(self):
        if not self.token_ids or self.token_ids[-1] != SEP_CONTEXT:
            raise ValueError("serialized context must end in the context separator token")


class ContextOverflow(ValueError):
    pass


def encode_context(
    turns: list[Turn] | tuple[Turn, ...],
    ontology: Ontology,
    vocab: Vocabulary,
    max_len: int = 4096,
) -> SerializedContext:
    """Serialize a dialogue prefix; oldest turns are dropped first when the
    budget is exceeded, never the slot preamble or the latest user turn."""
    if not turns:
        raise ValueError("need at least one turn")
    preamble = [BOS] + [vocab.id_of(s.name) for s in ontology.slots]
    blocks = []
    for turn in turns:
        block = [ROLE_SYS] + vocab.encode_text(turn.system_utterance) + [ROLE_USER] + vocab.encode_text(turn.user_utterance)
        blocks.append(block)
    keep = len(blocks)
    while keep > 1 and len(preamble) + sum(len(b) for b in blocks[-keep:]) + 1 > max_len:
        keep -= 1
    ids = preamble + [t for b in blocks[-keep:] for t in b] + [SEP_CONTEXT]
    if len(ids) > max_len:
        raise ContextOverflow(f"context of {len(ids)} tokens exceeds budget {max_len} even at one turn")
    return SerializedContext(token_ids=tuple(ids), turn_index=len(turns) - 1)


def encode_state(state: DialogueState, ontology: Ontology, vocab: Vocabulary) -> tuple[int, ...]:
    """``{ slot : value , ... } <eos_state>`` with slots in canonical order."""
    ids = [BRACE_OPEN]
    for i, (slot, value) in enumerate(state.items_canonical(ontology)):
        if i:
            ids.append(COMMA)
        ids.append(vocab.id_of(slot.name))
        ids.append(COLON)
        ids.extend(vocab.encode_text(value))
    ids.append(BRACE_CLOSE)
    ids.append(EOS_STATE)
    return tuple(ids)


@dataclass
class ParseDiagnostics:
    dropped: int = 0
    truncated: bool = False
    notes: list[str] = field(default_factory=list)


def parse_state(
    token_ids,
    ontology: Ontology,
    vocab: Vocabulary,
) -> tuple[DialogueState, ParseDiagnostics, dict[SlotId, tuple[int, int]]]:
    """Best-effort parse of a decode stream. Unknown slot names and dangling
    pairs are dropped and counted; never raises. Also returns the token span
    ``[start, end)`` of each accepted pair for log-probability attribution."""
    diag = ParseDiagnostics()
    pairs: dict[SlotId, str] = {}
    spans: dict[SlotId, tuple[int, int]] = {}
    toks = list(token_ids)
    i = 0
    if i < len(toks) and toks[i] == BRACE_OPEN:
        i += 1
    else:
        diag.notes.append("missing opening brace")
    saw_close = False
    while i < len(toks):
        tok = toks[i]
        if tok == BRACE_CLOSE or tok == EOS_STATE:
            saw_close = tok == BRACE_CLOSE
            break
        if tok == COMMA:
            i += 1
            continue
        start = i
        slot = ontology.by_name(vocab.token_of(tok)) if tok >= len(SPECIAL_TOKENS) else None
        i += 1
        if slot is None:
            diag.dropped += 1
            diag.notes.append("unknown slot name")
            while i < len(toks) and toks[i] not in (COMMA, BRACE_CLOSE, EOS_STATE):
                i += 1
            continue
        if i >= len(toks) or toks[i] != COLON:
            diag.dropped += 1
            diag.notes.append(f"slot {slot.name} missing separator")
            continue
        i += 1
        words = []
        stray_specials = 0
        while i < len(toks) and toks[i] not in (COMMA, BRACE_CLOSE, EOS_STATE):
            if toks[i] >= len(SPECIAL_TOKENS):
                words.append(vocab.token_of(toks[i]))
            else:
                stray_specials += 1  # structural token inside a value: junk, not text
            i += 1
        if stray_specials:
            diag.notes.append(f"slot {slot.name} value contained {stray_specials} structural tokens")
        ended = i < len(toks)
        value = normalize_value(" ".join(words))
        if not value or not ended:
            diag.dropped += 1
            diag.notes.append(f"slot {slot.name} has {'no' if not value else 'a truncated'} value")
            continue
        pairs[slot] = value
        spans[slot] = (start, i)
    if not saw_close and EOS_STATE not in toks:
        diag.truncated = True
    return DialogueState(pairs), diag, spans
