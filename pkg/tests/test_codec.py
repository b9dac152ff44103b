import hashlib

import pytest

from dstlab.codec import (
    BRACE_CLOSE,
    BRACE_OPEN,
    COLON,
    COMMA,
    EOS_STATE,
    ROLE_SYS,
    ROLE_USER,
    SEP_CONTEXT,
    SPECIAL_TOKENS,
    Vocabulary,
    build_vocab,
    encode_context,
    encode_state,
    parse_state,
    tokenize,
)
from dstlab.ontology import DialogueState, SlotId, Turn
from dstlab.synth import SynthConfig, generate_corpus


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(SynthConfig(n_train=40, n_validation=8, n_test=8, seed=13))


@pytest.fixture(scope="module")
def vocab(corpus):
    return build_vocab(corpus["train"], min_count=1)


def test_tokenize_keeps_clock_values_whole():
    assert tokenize("Leave after 15:15.") == ["leave", "after", "15:15", "."]
    assert tokenize("that's fine") == ["that's", "fine"]
    assert tokenize("hotel-area") == ["hotel", "-", "area"]


def test_specials_have_reserved_stable_ids(vocab):
    for i, tok in enumerate(SPECIAL_TOKENS):
        assert vocab.id_of(tok) == i


def test_vocab_contains_ontology_terms_even_if_unseen(corpus):
    vocab = build_vocab(corpus["train"], min_count=50)
    ontology = corpus["train"].ontology
    for slot in ontology.slots:
        assert slot.name in vocab
        for value in ontology.values[slot] or ():
            for tok in tokenize(value):
                assert tok in vocab
    assert "dontcare" in vocab


def test_vocab_deterministic_hash(corpus, tmp_path):
    v1 = build_vocab(corpus["train"])
    v2 = build_vocab(corpus["train"])
    assert v1.content_hash() == v2.content_hash()
    v1.save(tmp_path / "vocab.json")
    v2.save(tmp_path / "vocab2.json")
    h1 = hashlib.sha256((tmp_path / "vocab.json").read_bytes()).hexdigest()
    h2 = hashlib.sha256((tmp_path / "vocab2.json").read_bytes()).hexdigest()
    assert h1 == h2
    assert Vocabulary.load(tmp_path / "vocab.json").content_hash() == v1.content_hash()


def test_min_count_filters_rare_words(corpus):
    ontology = corpus["train"].ontology
    ontology_tokens = {t for s in ontology.slots for t in [s.name]} | {
        t for s in ontology.slots for v in (ontology.values[s] or ()) for t in tokenize(v)
    }
    loose = set(build_vocab(corpus["train"], min_count=1).tokens)
    tight = set(build_vocab(corpus["train"], min_count=10_000).tokens)
    assert tight < loose
    assert (tight - set(SPECIAL_TOKENS) - {"dontcare"}) <= ontology_tokens | {
        t for _, _, turn in corpus["train"].iter_turns() for t in tokenize(" ".join(turn.gold_state.pairs.values()))
    }


def test_context_layout_single_turn(corpus, vocab):
    ontology = corpus["train"].ontology
    ctx = encode_context([Turn("", "thanks", DialogueState())], ontology, vocab)
    ids = list(ctx.token_ids)
    assert ids[0] == vocab.id_of("<bos>")
    preamble = ids[1: 1 + len(ontology)]
    assert [vocab.token_of(i) for i in preamble] == [s.name for s in ontology.slots]
    assert ids[1 + len(ontology)] == ROLE_SYS
    assert ids[2 + len(ontology)] == ROLE_USER
    assert vocab.token_of(ids[-2]) == "thanks"
    assert ids[-1] == SEP_CONTEXT


def test_context_empty_system_gets_marker_with_no_body(corpus, vocab):
    ontology = corpus["train"].ontology
    ctx = encode_context([Turn("", "thanks a lot", DialogueState())], ontology, vocab)
    ids = list(ctx.token_ids)
    sys_pos = ids.index(ROLE_SYS)
    assert ids[sys_pos + 1] == ROLE_USER


def test_context_truncation_drops_oldest_turns_first(corpus, vocab):
    ontology = corpus["train"].ontology
    turns = [
        Turn("", "north " * 10, DialogueState()),
        Turn("sure .", "south " * 10, DialogueState()),
        Turn("got it .", "east " * 10, DialogueState()),
    ]
    full = encode_context(turns, ontology, vocab, max_len=4096)
    needed_for_two = len(encode_context(turns[1:], ontology, vocab, max_len=4096).token_ids)
    truncated = encode_context(turns, ontology, vocab, max_len=len(full.token_ids) - 1)
    assert len(truncated.token_ids) == needed_for_two
    tokens = [vocab.token_of(i) for i in truncated.token_ids]
    assert "north" not in tokens
    assert "south" in tokens and "east" in tokens
    assert truncated.token_ids[-1] == SEP_CONTEXT


def test_context_overflow_raises_when_one_turn_does_not_fit(corpus, vocab):
    ontology = corpus["train"].ontology
    with pytest.raises(ValueError):
        encode_context([Turn("", "word " * 100, DialogueState())], ontology, vocab,
                       max_len=len(ontology) + 20)


def test_empty_state_serialization(corpus, vocab):
    ontology = corpus["train"].ontology
    ids = encode_state(DialogueState(), ontology, vocab)
    assert list(ids) == [BRACE_OPEN, BRACE_CLOSE, EOS_STATE]
    state, diag, _ = parse_state(ids, ontology, vocab)
    assert state == DialogueState()
    assert diag.dropped == 0


def test_state_serializes_in_canonical_order(corpus, vocab):
    ontology = corpus["train"].ontology
    a, b = ontology.slots[0], ontology.slots[1]
    val = lambda s: (ontology.values[s] or ("anything",))[0]
    s1 = DialogueState({b: val(b), a: val(a)})
    s2 = DialogueState({a: val(a), b: val(b)})
    assert encode_state(s1, ontology, vocab) == encode_state(s2, ontology, vocab)
    ids = encode_state(s1, ontology, vocab)
    first_slot = vocab.token_of(ids[1])
    assert first_slot == a.name


def test_round_trip_on_all_gold_states(corpus, vocab):
    ontology = corpus["train"].ontology
    for split in corpus.values():
        for _, _, turn in split.iter_turns():
            ids = encode_state(turn.gold_state, ontology, vocab)
            state, diag, _ = parse_state(ids, ontology, vocab)
            assert state == turn.gold_state
            assert diag.dropped == 0 and not diag.truncated


def test_context_final_token_is_separator_everywhere(corpus, vocab):
    ontology = corpus["train"].ontology
    for dialogue in corpus["validation"].dialogues:
        for t in range(len(dialogue.turns)):
            ctx = encode_context(dialogue.turns[: t + 1], ontology, vocab)
            assert ctx.token_ids[-1] == SEP_CONTEXT
            assert ctx.turn_index == t


def test_parse_drops_dangling_pair(corpus, vocab):
    ontology = corpus["train"].ontology
    slot = ontology.slots[0]
    ids = [BRACE_OPEN, vocab.id_of(slot.name), COLON, BRACE_CLOSE, EOS_STATE]
    state, diag, _ = parse_state(ids, ontology, vocab)
    assert slot not in state
    assert diag.dropped == 1


def test_parse_drops_unknown_slot_but_keeps_rest(corpus, vocab):
    ontology = corpus["train"].ontology
    slot = ontology.slots[0]
    value_tok = vocab.id_of(tokenize((ontology.values[slot] or ("x",))[0])[0])
    junk = vocab.id_of("the")
    ids = [BRACE_OPEN, junk, COLON, value_tok, COMMA,
           vocab.id_of(slot.name), COLON, value_tok, BRACE_CLOSE, EOS_STATE]
    state, diag, _ = parse_state(ids, ontology, vocab)
    assert diag.dropped == 1
    assert slot in state


def test_parse_excludes_structural_tokens_from_values(corpus, vocab):
    ontology = corpus["train"].ontology
    slot = ontology.slots[0]
    word = vocab.id_of(tokenize((ontology.values[slot] or ("x",))[0])[0])
    ids = [BRACE_OPEN, vocab.id_of(slot.name), COLON, word, COLON, word, BRACE_CLOSE, EOS_STATE]
    state, diag, _ = parse_state(ids, ontology, vocab)
    value = state.get(slot)
    assert value is not None and "<" not in value
    assert any("structural" in note for note in diag.notes)


def test_parse_truncated_stream_flags_and_salvages(corpus, vocab):
    ontology = corpus["train"].ontology
    slot, other = ontology.slots[0], ontology.slots[1]
    v1 = vocab.id_of(tokenize((ontology.values[slot] or ("x",))[0])[0])
    ids = [BRACE_OPEN, vocab.id_of(slot.name), COLON, v1, COMMA, vocab.id_of(other.name), COLON]
    state, diag, _ = parse_state(ids, ontology, vocab)
    assert slot in state and other not in state
    assert diag.truncated
    assert diag.dropped == 1
