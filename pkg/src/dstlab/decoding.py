"""Greedy state generation and forced value continuation.

Slot probabilities come from the classifier at the context separator, so
they are fixed by the context alone; any forced decoding prefix leaves them
unchanged. Value continuation re-decodes with the generated state re-opened
(closing tokens stripped), the missing slot name and separator appended,
and greedy completion until a pair terminator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import (
    BRACE_CLOSE,
    BRACE_OPEN,
    COLON,
    COMMA,
    EOS_STATE,
    SPECIAL_TOKENS,
    SerializedContext,
    Vocabulary,
    parse_state,
)
from .model import Checkpoint, DecodeSession, ModelConfig
from .ontology import CorpusSplit, DialogueState, Ontology, SlotId, Turn, normalize_value

_PAIR_TERMINATORS = (COMMA, BRACE_CLOSE, EOS_STATE)


@dataclass(frozen=True)
class DecodedState:
    state: DialogueState
    raw_tokens: tuple[int, ...]
    per_pair_token_logprobs: dict[SlotId, float]
    dropped_pairs: int = 0
    truncated: bool = False


def _log_softmax_at(logits: np.ndarray, idx: int) -> float:
    z = logits.astype(np.float64)
    mx = z.max()
    return float(z[idx] - mx - np.log(np.exp(z - mx).sum()))


def forced_prefix_tokens(raw_tokens, slot: SlotId, vocab: Vocabulary) -> list[int]:
    """Re-open the generated state and append ``slot :``.

    The closing tokens (and a trailing comma on truncated streams) are
    stripped; the surviving pair tokens are preserved verbatim. An empty
    state degenerates to ``{ slot :`` with no leading comma.
    """
    prefix = list(raw_tokens)
    while prefix and prefix[-1] in (EOS_STATE, BRACE_CLOSE, COMMA):
        prefix.pop()
    if not prefix:
        prefix = [BRACE_OPEN]
    if prefix[-1] != BRACE_OPEN:
        prefix.append(COMMA)
    prefix += [vocab.id_of(slot.name), COLON]
    return prefix


class StateDecoder:
    """Greedy decoder over a frozen checkpoint; read-only and reusable."""

    def __init__(self, checkpoint: Checkpoint, vocab: Vocabulary, ontology: Ontology,
                 max_new_tokens: int = 96, max_value_tokens: int = 8):
        self.params = checkpoint.params
        self.config: ModelConfig = checkpoint.config
        self.vocab = vocab
        self.ontology = ontology
        self.max_new_tokens = max_new_tokens
        self.max_value_tokens = max_value_tokens

    def slot_probabilities(self, context: SerializedContext) -> np.ndarray:
        session = DecodeSession(self.params, self.config)
        session.prefill(np.asarray(context.token_ids))
        return session.slot_probabilities()

    def decode(self, context: SerializedContext) -> tuple[DecodedState, np.ndarray]:
        """Greedy generation from the separator; returns the parsed state and
        the slot probabilities (a pure function of the context)."""
        session = DecodeSession(self.params, self.config)
        session.prefill(np.asarray(context.token_ids))
        probs = session.slot_probabilities()
        budget = min(self.max_new_tokens, self.config.max_seq_len - session.length)
        tokens: list[int] = []
        logprobs: list[float] = []
        truncated = True
        for _ in range(budget):
            logits = session.lm_logits()
            tok = int(np.argmax(logits))
            logprobs.append(_log_softmax_at(logits, tok))
            tokens.append(tok)
            if tok == EOS_STATE:
                truncated = False
                break
            session.step(tok)
        state, diag, spans = parse_state(tokens, self.ontology, self.vocab)
        pair_lp = {slot: float(sum(logprobs[a:b])) for slot, (a, b) in spans.items()}
        decoded = DecodedState(
            state=state,
            raw_tokens=tuple(tokens),
            per_pair_token_logprobs=pair_lp,
            dropped_pairs=diag.dropped,
            truncated=truncated or diag.truncated,
        )
        return decoded, probs

    def forced_value(self, context: SerializedContext, decoded: DecodedState, slot: SlotId) -> str | None:
        """Complete ``, slot :`` after the already-generated pairs; never
        touches the existing pairs. Returns None when no usable value comes out."""
        if slot in decoded.state:
            raise ValueError(f"slot {slot.name} already present in the generated state")
        prefix = forced_prefix_tokens(decoded.raw_tokens, slot, self.vocab)
        ids = list(context.token_ids) + prefix
        if len(ids) + 2 > self.config.max_seq_len:
            return None
        session = DecodeSession(self.params, self.config)
        session.prefill(np.asarray(ids))
        words: list[str] = []
        for _ in range(min(self.max_value_tokens, self.config.max_seq_len - session.length)):
            tok = int(np.argmax(session.lm_logits()))
            if tok in _PAIR_TERMINATORS or tok < len(SPECIAL_TOKENS):
                break
            words.append(self.vocab.token_of(tok))
            session.step(tok)
        value = normalize_value(" ".join(words))
        return value or None


@dataclass
class TurnDecode:
    """Everything downstream stages need about one decoded turn."""

    dialogue_id: str
    turn_index: int
    context: SerializedContext
    decoded: DecodedState
    probs: np.ndarray
    gold: DialogueState


class CachedValueSource:
    """Per-turn value generator with memoization, shaped for the corrector."""

    def __init__(self, decoder: StateDecoder, turn: TurnDecode):
        self.decoder = decoder
        self.turn = turn
        self._cache: dict[SlotId, str | None] = {}
        self.calls = 0

    def __call__(self, slot: SlotId) -> str | None:
        if slot not in self._cache:
            self.calls += 1
            self._cache[slot] = self.decoder.forced_value(self.turn.context, self.turn.decoded, slot)
        return self._cache[slot]


def decode_split(
    checkpoint: Checkpoint,
    split: CorpusSplit,
    vocab: Vocabulary,
    max_new_tokens: int = 96,
    max_context_len: int = 0,
) -> list[TurnDecode]:
    """Decode every turn of a split; the backbone of all evaluations."""
    from .codec import encode_context

    decoder = StateDecoder(checkpoint, vocab, split.ontology, max_new_tokens=max_new_tokens)
    max_ctx = max_context_len or (checkpoint.config.max_seq_len - 64)
    out = []
    for dialogue, t, turn in split.iter_turns():
        context = encode_context(dialogue.turns[: t + 1], split.ontology, vocab, max_len=max_ctx)
        decoded, probs = decoder.decode(context)
        out.append(TurnDecode(dialogue.id, t, context, decoded, probs, turn.gold_state))
    return out
