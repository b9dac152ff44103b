import dataclasses
import math

import numpy as np
import pytest

from dstlab import autograd as ag
from dstlab import model as M
from dstlab.codec import build_vocab
from dstlab.synth import SynthConfig, generate_corpus
from dstlab.training import (
    AdamW,
    LossReport,
    TrainingConfig,
    TrainingDiverged,
    _BatchLoss,
    bce_loss,
    bce_loss_from_logits,
    build_examples,
    lm_loss,
    train,
)


@pytest.fixture(scope="module")
def tiny_setup():
    splits = generate_corpus(SynthConfig(n_train=16, n_validation=6, n_test=6, seed=17))
    vocab = build_vocab(splits["train"])
    config = M.ModelConfig(vocab_size=len(vocab), n_slots=len(splits["train"].ontology),
                           d_model=16, n_layers=1, n_heads=2, max_seq_len=160,
                           dropout_rate=0.0, dtype="float64")
    return splits, vocab, config


def test_lm_loss_zero_when_target_certain():
    logits = np.full((3, 7), -1e9)
    targets = [2, 5, 0]
    for i, t in enumerate(targets):
        logits[i, t] = 1e9 if False else 0.0  # one-hot via huge margin below
        logits[i, t] = 1000.0
    assert lm_loss(logits, targets) == pytest.approx(0.0, abs=1e-12)


def test_lm_loss_uniform_logits_is_log_vocab():
    vocab_size = 23
    logits = np.zeros((5, vocab_size))
    assert lm_loss(logits, [1, 2, 3, 4, 5]) == pytest.approx(math.log(vocab_size), rel=1e-12)


def test_lm_loss_matches_hand_computation():
    logits = np.array([
        [2.0, 1.0, 0.0],
        [0.5, 0.5, -1.0],
        [3.0, -2.0, 0.1],
    ])
    targets = [0, 1, 2]
    expected = 0.0
    for row, tgt in zip(logits, targets):
        expected -= row[tgt] - math.log(sum(math.exp(v) for v in row))
    expected /= 3
    assert lm_loss(logits, targets) == pytest.approx(expected, rel=1e-12)


def test_lm_loss_rejects_empty_target():
    with pytest.raises(ValueError):
        lm_loss(np.zeros((0, 5)), [])


def test_bce_loss_confident_correct_is_zero():
    probs = np.full(6, 1.0 - 1e-12)
    labels = np.ones(6)
    assert bce_loss(probs, labels) == pytest.approx(0.0, abs=1e-9)


def test_bce_loss_half_probabilities_is_log_two():
    probs = np.full(9, 0.5)
    for labels in (np.zeros(9), np.ones(9), (np.arange(9) % 2).astype(float)):
        assert bce_loss(probs, labels) == pytest.approx(math.log(2.0), rel=1e-12)


def test_bce_loss_scalar_example():
    probs = np.array([0.9, 0.2])
    labels = np.array([1.0, 0.0])
    expected = -(math.log(0.9) + math.log(0.8)) / 2
    assert bce_loss(probs, labels) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.16425, abs=5e-6)


def test_bce_from_logits_matches_clamped_probability_form():
    rng = np.random.default_rng(4)
    # tight agreement where float64 probabilities still carry the tail
    for _ in range(30):
        logits = rng.uniform(-14, 14, size=12)
        labels = (rng.random(12) < 0.5).astype(float)
        a = bce_loss_from_logits(logits, labels)
        b = bce_loss(1.0 / (1.0 + np.exp(-logits)), labels)
        assert a == pytest.approx(b, abs=1e-9)
    # near |logit| = 20 the stored probability loses tail precision
    # (ulp(1)/tail ~ 5e-8), bounding the attainable agreement
    for _ in range(30):
        logits = rng.uniform(-20, 20, size=12)
        labels = (rng.random(12) < 0.5).astype(float)
        a = bce_loss_from_logits(logits, labels)
        b = bce_loss(1.0 / (1.0 + np.exp(-logits)), labels)
        assert a == pytest.approx(b, abs=1e-7)


def test_joint_loss_identity_random_batches(tiny_setup):
    splits, vocab, config = tiny_setup
    params = M.wrap_parameters(M.init_parameters(config, seed=0))
    examples = build_examples(splits["train"], vocab, 150)
    rng = np.random.default_rng(0)
    for _ in range(20):
        lam = float(rng.random())
        idx = rng.choice(len(examples), size=4, replace=False)
        batch = [examples[i] for i in idx]
        bl = _BatchLoss(params, config, batch, lam, train=False, rng=None)
        assert bl.account.item() == bl.lm.item() + lam * bl.bce.item()


def test_lambda_zero_keeps_classifier_gradient_exactly_zero(tiny_setup):
    splits, vocab, config = tiny_setup
    params = M.wrap_parameters(M.init_parameters(config, seed=1))
    examples = build_examples(splits["train"], vocab, 150)
    bl = _BatchLoss(params, config, examples[:4], 0.0, train=False, rng=None)
    grads = ag.gradients(bl.account, params)
    assert np.all(grads["w_acc"] == 0.0)
    assert np.all(grads["b_acc"] == 0.0)
    bl = _BatchLoss(params, config, examples[:4], 0.25, train=False, rng=None)
    grads = ag.gradients(bl.account, params)
    assert np.abs(grads["w_acc"]).sum() > 0


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(lambda_weight=1.5)
    with pytest.raises(ValueError):
        TrainingConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainingConfig(selection="other")


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_setup, tmp_path):
    splits, vocab, config = tiny_setup
    tc = TrainingConfig(lambda_weight=0.25, learning_rate=0.0, epochs=1, batch_size=4,
                        seed=3, checkpoint_dir=str(tmp_path), weight_decay=0.0)
    result = train(config, tc, splits["train"], splits["validation"], vocab)
    reference = M.init_parameters(config, seed=3)
    for name, value in reference.items():
        np.testing.assert_array_equal(result.checkpoint.params[name], value)


def test_lambda_zero_training_never_touches_classifier(tiny_setup, tmp_path):
    splits, vocab, config = tiny_setup
    tc = TrainingConfig(lambda_weight=0.0, learning_rate=1e-3, epochs=1, batch_size=4,
                        seed=5, checkpoint_dir=str(tmp_path), weight_decay=0.01)
    result = train(config, tc, splits["train"], splits["validation"], vocab)
    reference = M.init_parameters(config, seed=5)
    np.testing.assert_array_equal(result.checkpoint.params["w_acc"], reference["w_acc"])
    np.testing.assert_array_equal(result.checkpoint.params["b_acc"], reference["b_acc"])
    assert not np.array_equal(result.checkpoint.params["tok_emb"], reference["tok_emb"])


def test_training_determinism_same_seed_same_checkpoint_hash(tiny_setup, tmp_path):
    splits, vocab, config = tiny_setup
    tc = TrainingConfig(lambda_weight=0.25, learning_rate=1e-3, epochs=2, batch_size=4,
                        seed=11, checkpoint_dir=str(tmp_path / "a"))
    r1 = train(config, tc, splits["train"], splits["validation"], vocab)
    tc2 = dataclasses.replace(tc, checkpoint_dir=str(tmp_path / "b"))
    r2 = train(config, tc2, splits["train"], splits["validation"], vocab)
    assert r1.file_hash == r2.file_hash
    tc3 = dataclasses.replace(tc, seed=12, checkpoint_dir=str(tmp_path / "c"))
    r3 = train(config, tc3, splits["train"], splits["validation"], vocab)
    assert r3.file_hash != r1.file_hash


def test_report_identity_and_curves(tiny_setup, tmp_path):
    splits, vocab, config = tiny_setup
    tc = TrainingConfig(lambda_weight=0.5, learning_rate=1e-3, epochs=2, batch_size=4,
                        seed=2, checkpoint_dir=str(tmp_path))
    result = train(config, tc, splits["train"], splits["validation"], vocab)
    report: LossReport = result.report
    assert report.identity_gap() == 0.0
    assert len(report.curves) == 2
    assert report.lm >= 0 and report.bce >= 0
    assert result.checkpoint.extra["best_epoch"] == report.best_epoch


def test_divergence_aborts_with_batch_id(tiny_setup, tmp_path):
    # normalization layers keep moderate blowups finite; a pathological step
    # size overflows the residual stream and must abort with a location
    splits, vocab, config = tiny_setup
    tc = TrainingConfig(lambda_weight=0.25, learning_rate=1e200, epochs=3, batch_size=4,
                        seed=7, checkpoint_dir=str(tmp_path), weight_decay=0.0)
    with pytest.raises(TrainingDiverged) as err:
        train(config, tc, splits["train"], splits["validation"], vocab)
    assert "epoch" in err.value.batch_id


def test_grad_accumulation_matches_big_batch(tiny_setup):
    """Averaged micro-batch gradients equal the full-batch gradient when the
    loss is a mean of per-example means."""
    splits, vocab, config = tiny_setup
    params = M.wrap_parameters(M.init_parameters(config, seed=0))
    examples = build_examples(splits["train"], vocab, 150)[:8]
    full = ag.gradients(_BatchLoss(params, config, examples, 0.25, train=False, rng=None).account, params)
    acc = None
    for half in (examples[:4], examples[4:]):
        g = ag.gradients(_BatchLoss(params, config, half, 0.25, train=False, rng=None).account, params)
        acc = {k: v / 2 for k, v in g.items()} if acc is None else {k: acc[k] + v / 2 for k, v in g.items()}
    for name in full:
        np.testing.assert_allclose(acc[name], full[name], rtol=1e-9, atol=1e-12)


def test_best_lambda_tie_breaks_toward_smaller_weight():
    from dstlab.training import best_lambda_from_table

    assert best_lambda_from_table([(0.25, 80.0)]) == 0.25
    assert best_lambda_from_table([(0.0, 70.0), (0.25, 80.0), (0.5, 80.0)]) == 0.25
    assert best_lambda_from_table([(0.0, 80.0), (0.1, 80.0), (1.0, 80.0)]) == 0.0
    with pytest.raises(ValueError):
        best_lambda_from_table([])


def test_select_lambda_singleton_grid(tiny_setup, tmp_path):
    from dstlab.training import select_lambda

    splits, vocab, config = tiny_setup
    tc = TrainingConfig(learning_rate=1e-3, epochs=1, batch_size=8, seed=2,
                        checkpoint_dir=str(tmp_path))
    best, table = select_lambda([0.25], config, tc, splits["train"], splits["validation"],
                                vocab, max_new_tokens=48)
    assert best == 0.25
    assert len(table) == 1 and table[0][0] == 0.25
    assert 0.0 <= table[0][1] <= 100.0
    with pytest.raises(ValueError):
        select_lambda([], config, tc, splits["train"], splits["validation"], vocab)


def test_overfit_small_corpus_reaches_full_accuracy(tmp_path):
    """Capacity sanity: memorize a handful of dialogues."""
    from dstlab.decoding import decode_split
    from dstlab.metrics import jga

    splits = generate_corpus(SynthConfig(n_train=10, n_validation=6, n_test=4, seed=23))
    vocab = build_vocab(splits["train"])
    config = M.ModelConfig(vocab_size=len(vocab), n_slots=len(splits["train"].ontology),
                           d_model=48, n_layers=2, n_heads=4, max_seq_len=160,
                           dropout_rate=0.0, dtype="float32")
    tc = TrainingConfig(lambda_weight=0.25, learning_rate=2e-3, epochs=200, batch_size=8,
                        seed=1, checkpoint_dir=str(tmp_path), selection="joint")
    result = train(config, tc, splits["train"], splits["train"], vocab)
    decodes = decode_split(result.checkpoint, splits["train"], vocab)
    golds = [t.gold for t in decodes]
    assert jga([d.decoded.state for d in decodes], golds) == 100.0
    assert result.report.bce < 0.01
