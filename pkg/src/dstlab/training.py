"""Joint training of the generation head and the slot classifier.

The objective is ``L = L_lm + lambda * L_bce``: token-level negative log
likelihood over the serialized state (context tokens are never targets,
structural tokens are), plus the weighted per-slot binary cross entropy on
the classifier logits at the separator position. Batch losses are means of
per-example means. Model selection keeps the epoch with minimum validation
loss (joint by default, LM-only by flag).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import kernels, model as model_mod
from .codec import PAD, SerializedContext, Vocabulary, encode_context, encode_state
from .model import Checkpoint, ModelConfig, Tensor
from .ontology import CorpusSplit, Ontology, slot_labels

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, batch_id: str):
        super().__init__(f"non-finite loss at batch {batch_id}")
        self.batch_id = batch_id


@dataclass(frozen=True)
class TrainingConfig:
    lambda_weight: float = 0.25
    learning_rate: float = 5e-5
    epochs: int = 4
    batch_size: int = 8
    grad_accumulation_steps: int = 1
    seed: int = 0
    checkpoint_dir: str = "runs"
    weight_decay: float = 0.01
    warmup_steps: int = 0
    selection: str = "joint"  # or "lm"
    max_context_len: int = 0  # 0: use model max_seq_len minus headroom

    def __post_init__(self):
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError("lambda_weight must lie in [0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.selection not in ("joint", "lm"):
            raise ValueError("selection must be 'joint' or 'lm'")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)


@dataclass
class EpochStats:
    train_lm: float
    train_bce: float
    train_account: float
    val_lm: float
    val_bce: float
    val_account: float


@dataclass
class LossReport:
    lm: float
    bce: float
    account: float
    lambda_weight: float
    best_epoch: int
    curves: list[EpochStats] = field(default_factory=list)

    def identity_gap(self) -> float:
        return self.account - (self.lm + self.lambda_weight * self.bce)


# --- loss surfaces -----------------------------------------------------------

def lm_loss(token_logits: np.ndarray, target_ids) -> float:
    """Mean negative log likelihood of the target tokens, one logit row each."""
    targets = np.asarray(target_ids, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("empty generation target")
    if token_logits.shape[0] != targets.size:
        raise ValueError("need exactly one logit row per target position")
    weights = np.full(targets.size, 1.0 / targets.size)
    loss, _ = kernels.cross_entropy_forward(np.asarray(token_logits, dtype=np.float64), targets, weights)
    return float(loss)


def bce_loss(probs: np.ndarray, labels) -> float:
    """Mean binary cross entropy over slots, from probabilities (clamped)."""
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-15, 1.0 - 1e-15)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def bce_loss_from_logits(logits: np.ndarray, labels) -> float:
    """Numerically stable form used by training."""
    z = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    y = np.asarray(labels, dtype=np.float64).reshape(1, -1)
    return float(kernels.bce_forward(z, y, np.array([1.0 / z.shape[1]])))


# --- dataset -----------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    ctx_ids: tuple[int, ...]
    tgt_ids: tuple[int, ...]
    labels: np.ndarray
    dialogue_id: str
    turn_index: int

    @property
    def total_len(self) -> int:
        return len(self.ctx_ids) + len(self.tgt_ids)


def build_examples(split: CorpusSplit, vocab: Vocabulary, max_context_len: int) -> list[Example]:
    """One example per turn: serialized prefix context, serialized gold state, slot labels."""
    examples = []
    ontology = split.ontology
    for dialogue, t, turn in split.iter_turns():
        ctx = encode_context(dialogue.turns[: t + 1], ontology, vocab, max_len=max_context_len)
        tgt = encode_state(turn.gold_state, ontology, vocab)
        examples.append(Example(ctx.token_ids, tgt, slot_labels(turn.gold_state, ontology),
                                dialogue.id, t))
    return examples


def _batches(order: np.ndarray, examples: list[Example], batch_size: int):
    """Length-bucketed batches: sort inside shuffled windows to limit padding."""
    window = batch_size * 8
    for start in range(0, len(order), window):
        chunk = sorted(order[start: start + window], key=lambda i: examples[i].total_len)
        for b in range(0, len(chunk), batch_size):
            yield [examples[i] for i in chunk[b: b + batch_size]]


class _BatchLoss:
    """Forward pass over one padded batch producing the joint loss tensors."""

    def __init__(self, params: dict[str, Tensor], config: ModelConfig, batch: list[Example],
                 lambda_weight: float, train: bool, rng: np.random.Generator | None):
        bsz = len(batch)
        t_max = max(e.total_len for e in batch)
        ids = np.full((bsz, t_max), PAD, dtype=np.int64)
        sep = np.empty(bsz, dtype=np.int64)
        rows_b, rows_t, targets, weights = [], [], [], []
        labels = np.empty((bsz, len(batch[0].labels)), dtype=config.np_dtype)
        for b, ex in enumerate(batch):
            seq = list(ex.ctx_ids) + list(ex.tgt_ids)
            ids[b, : len(seq)] = seq
            sep[b] = len(ex.ctx_ids) - 1
            n = len(ex.tgt_ids)
            rows_b.extend([b] * n)
            rows_t.extend(range(sep[b], sep[b] + n))
            targets.extend(ex.tgt_ids)
            weights.extend([1.0 / (n * bsz)] * n)
            labels[b] = ex.labels
        hidden = model_mod.encode_hidden(params, config, ids, train=train, rng=rng)
        lm_rows = ag.gather_rows(hidden, np.asarray(rows_b, dtype=np.int64), np.asarray(rows_t, dtype=np.int64))
        token_logits = model_mod.lm_head(params, config, lm_rows)
        self.lm = ag.cross_entropy(token_logits, np.asarray(targets, dtype=np.int64),
                                   np.asarray(weights, dtype=np.float64))
        phi = ag.gather_rows(hidden, np.arange(bsz), sep)
        slot_logits = model_mod.classifier_head(params, config, phi, train=train, rng=rng)
        bce_w = np.full(bsz, 1.0 / (bsz * labels.shape[1]))
        self.bce = ag.bce_with_logits(slot_logits, labels, bce_w)
        if lambda_weight > 0.0:
            self.account = ag.add(self.lm, ag.scale(self.bce, lambda_weight))
        else:
            self.account = self.lm  # classifier parameters stay out of the tape walk


def evaluate_loss(params: dict[str, Tensor], config: ModelConfig, examples: list[Example],
                  lambda_weight: float, batch_size: int) -> tuple[float, float, float]:
    """(lm, bce, account) means over examples, dropout off."""
    total_lm = total_bce = 0.0
    n = len(examples)
    for start in range(0, n, batch_size):
        batch = examples[start: start + batch_size]
        bl = _BatchLoss(params, config, batch, lambda_weight, train=False, rng=None)
        total_lm += bl.lm.item() * len(batch)
        total_bce += bl.bce.item() * len(batch)
    lm = total_lm / n
    bce = total_bce / n
    return lm, bce, lm + lambda_weight * bce


# --- optimizer ---------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices only."""

    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float,
                 no_decay: set[str] = frozenset(), beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay = {
            k: (weight_decay if p.data.ndim >= 2 and k not in no_decay else 0.0)
            for k, p in params.items()
        }
        self.m = {k: np.zeros(p.data.size, dtype=np.float64) for k, p in params.items()}
        self.v = {k: np.zeros(p.data.size, dtype=np.float64) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> None:
        self.t += 1
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p.data)
            kernels.adamw_step(p.data, g, self.m[k], self.v[k], self.t,
                               self.lr * lr_scale, self.beta1, self.beta2, self.eps, self.decay[k])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    report: LossReport
    path: Path
    file_hash: str


def train(
    model_config: ModelConfig,
    config: TrainingConfig,
    train_split: CorpusSplit,
    validation_split: CorpusSplit,
    vocab: Vocabulary,
    checkpoint_name: str = "model",
    extra_meta: dict | None = None,
) -> TrainResult:
    """Full training run; returns the minimum-validation-loss checkpoint."""
    t0 = time.monotonic()
    rng = np.random.default_rng(config.seed)
    raw = model_mod.init_parameters(model_config, config.seed)
    params = model_mod.wrap_parameters(raw)
    logger.info("initialized %d parameters", model_mod.parameter_count(raw))
    lam = config.lambda_weight
    no_decay = {"w_acc", "b_acc"} if lam == 0.0 else set()
    opt = AdamW(params, config.learning_rate, config.weight_decay, no_decay=no_decay)
    max_ctx = config.max_context_len or (model_config.max_seq_len - 64)
    train_examples = build_examples(train_split, vocab, max_ctx)
    val_examples = build_examples(validation_split, vocab, max_ctx)

    best = None  # (selection value, epoch, snapshot, stats)
    curves: list[EpochStats] = []
    accum = max(1, config.grad_accumulation_steps)
    step_idx = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_examples))
        run_lm = run_bce = 0.0
        seen = 0
        pending: dict[str, np.ndarray] | None = None
        pending_count = 0
        for batch in _batches(order, train_examples, config.batch_size):
            bl = _BatchLoss(params, model_config, batch, lam, train=True, rng=rng)
            if not (np.isfinite(bl.lm.data) and np.isfinite(bl.bce.data)):
                raise TrainingDiverged(f"epoch{epoch}/step{step_idx}")
            run_lm += bl.lm.item() * len(batch)
            run_bce += bl.bce.item() * len(batch)
            seen += len(batch)
            grads = ag.gradients(bl.account, params)
            if accum > 1:
                if pending is None:
                    pending = {k: g / accum for k, g in grads.items()}
                else:
                    for k, g in grads.items():
                        pending[k] += g / accum
                pending_count += 1
                if pending_count < accum:
                    continue
                grads, pending, pending_count = pending, None, 0
            step_idx += 1
            lr_scale = min(1.0, step_idx / config.warmup_steps) if config.warmup_steps else 1.0
            opt.step(grads, lr_scale)
        for p in params.values():
            if not np.isfinite(p.data).all():
                raise TrainingDiverged(f"epoch{epoch}/post-step")
        val_lm, val_bce, val_account = evaluate_loss(params, model_config, val_examples, lam, config.batch_size)
        stats = EpochStats(
            train_lm=run_lm / max(seen, 1), train_bce=run_bce / max(seen, 1),
            train_account=(run_lm + lam * run_bce) / max(seen, 1),
            val_lm=val_lm, val_bce=val_bce, val_account=val_account,
        )
        curves.append(stats)
        criterion = val_account if config.selection == "joint" else val_lm
        if best is None or criterion < best[0]:
            best = (criterion, epoch, {k: p.data.copy() for k, p in params.items()}, stats)
        logger.info("epoch %d: train lm %.4f bce %.4f | val lm %.4f bce %.4f account %.4f",
                    epoch, stats.train_lm, stats.train_bce, val_lm, val_bce, val_account)

    _, best_epoch, best_params, best_stats = best
    report = LossReport(
        lm=best_stats.val_lm, bce=best_stats.val_bce,
        account=best_stats.val_lm + lam * best_stats.val_bce,
        lambda_weight=lam, best_epoch=best_epoch, curves=curves,
    )
    from .corpus_io import corpus_hash

    stored_config = config.to_dict()
    stored_config.pop("checkpoint_dir")  # environmental; keeps checkpoint bytes path-independent
    ckpt = Checkpoint(
        config=model_config,
        params=best_params,
        ontology_hash=train_split.ontology.content_hash(),
        vocab_hash=vocab.content_hash(),
        extra={
            "training_config": stored_config,
            "best_epoch": best_epoch,
            "train_corpus_hash": corpus_hash(train_split),
            **(extra_meta or {}),
        },
    )
    out_dir = Path(config.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{checkpoint_name}.ckpt"
    digest = model_mod.save_checkpoint(ckpt, path)
    logger.info("training finished in %.1fs; best epoch %d -> %s", time.monotonic() - t0, best_epoch, path)
    return TrainResult(checkpoint=ckpt, report=report, path=path, file_hash=digest)


def best_lambda_from_table(table: list[tuple[float, float]]) -> float:
    """Argmax by validation accuracy; ties resolve toward the smaller weight."""
    if not table:
        raise ValueError("empty candidate table")
    return max(table, key=lambda kv: (kv[1], -kv[0]))[0]


def select_lambda(
    grid: list[float],
    model_config: ModelConfig,
    base_config: TrainingConfig,
    train_split: CorpusSplit,
    validation_split: CorpusSplit,
    vocab: Vocabulary,
    max_new_tokens: int = 96,
) -> tuple[float, list[tuple[float, float]]]:
    """Train one model per candidate weight (same seed) and pick the one whose
    raw generation maximizes validation joint goal accuracy; ties prefer the
    smaller weight. Returns (best, [(weight, jga%), ...])."""
    if not grid:
        raise ValueError("empty candidate grid")
    from dataclasses import replace

    from .decoding import decode_split
    from .metrics import jga

    table = []
    for lam in sorted(grid):
        cfg = replace(base_config, lambda_weight=lam)
        result = train(model_config, cfg, train_split, validation_split, vocab,
                       checkpoint_name=f"lambda_{lam:g}")
        decoded = decode_split(result.checkpoint, validation_split, vocab, max_new_tokens=max_new_tokens)
        golds = [turn.gold_state for _, _, turn in validation_split.iter_turns()]
        table.append((lam, jga([d.decoded.state for d in decoded], golds)))
    return best_lambda_from_table(table), table
