"""End-to-end experiment pipeline: corpus, training, tuning, variant
evaluation, sweeps, and run persistence.

Model variants share one set of cached test decodes:

* ``base``      - generation-only model (classifier weight 0); calibration
                  column is blank because its classifier head is untrained.
* ``account``   - jointly trained model, raw generation.
* ``self-correct``   - account decodes corrected with tuned thresholds and
                       generated values.
* ``oracle-correct`` - upper bound: reference values, additions gated on
                       reference membership.
* ``user-correct``   - friction questions answered by a user simulator.

Every run writes a manifest (config hash, corpus hashes, checkpoint hashes,
git revision, metrics) under the run directory; metric files themselves are
byte-stable for a fixed config and seed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import Vocabulary, build_vocab
from .correction import (
    DEFAULT_TAU_FN_GRID,
    DEFAULT_TAU_FP_GRID,
    CorrectionResult,
    Thresholds,
    grid_search_thresholds,
    oracle_correct,
    self_correct,
)
from .corpus_io import corpus_hash, load_corpus, save_corpus
from .decoding import CachedValueSource, StateDecoder, TurnDecode, decode_split
from .friction import NoisySimulator, OracleSimulator, apply_answers, build_questions
from .metrics import MetricsReport, compute_report, reports_to_csv
from .model import Checkpoint, ModelConfig, load_checkpoint
from .ontology import CorpusSplit
from .synth import SynthConfig, generate_corpus
from .training import TrainingConfig, TrainResult, train

logger = logging.getLogger(__name__)

VARIANTS = ("base", "account", "self-correct", "oracle-correct", "user-correct")


@dataclass(frozen=True)
class PipelineConfig:
    """Desk-scale experiment preset.

    The synth/model/training defaults are the calibrated reference setup:
    2000 training dialogues over 3 domains x 4 slots with distractor chatter
    and unmarked cross-domain mentions, a 64-wide 2-layer decoder, and six
    epochs at 2e-3. At this operating point the jointly trained model clears
    the generation-only baseline by several JGA points (seed-averaged) with
    the whole pipeline finishing well inside a desktop-CPU budget.
    """

    synth: SynthConfig = SynthConfig(
        seed=11, value_set_size=4, distractor_rate=0.3, chatter_rate=0.25, ambiguity_rate=0.5)
    model: dict = field(default_factory=dict)  # ModelConfig overrides (sizes, dtype)
    training: TrainingConfig = TrainingConfig(
        learning_rate=2e-3, epochs=6, batch_size=16, warmup_steps=100)
    lambda_account: float = 0.25
    tau_fp_grid: tuple = DEFAULT_TAU_FP_GRID
    tau_fn_grid: tuple = DEFAULT_TAU_FN_GRID
    lambda_grid: tuple = (0.0, 0.1, 0.25, 0.5, 0.75, 1.0)
    max_new_tokens: int = 96
    run_dir: str = "runs"
    corpus_dir: str = "corpus"
    min_count: int = 1
    # restrict simulated users to agree/disagree (no value updates)
    binary_friction: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "synth" in d:
            d["synth"] = SynthConfig(**d["synth"])
        if "training" in d:
            d["training"] = TrainingConfig(**d["training"])
        for key in ("tau_fp_grid", "tau_fn_grid", "lambda_grid"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("tau_fp_grid", "tau_fn_grid", "lambda_grid"):
            out[key] = list(out[key])
        return out

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def model_config(self, vocab_size: int, n_slots: int) -> ModelConfig:
        defaults = dict(d_model=64, n_layers=2, n_heads=4, max_seq_len=256, dropout_rate=0.05, dtype="float32")
        defaults.update(self.model)
        return ModelConfig(vocab_size=vocab_size, n_slots=n_slots, **defaults)


def git_revision() -> str:
    try:
        return subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                              text=True, timeout=5).stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def prepare_corpus(config: PipelineConfig, out_dir: str | Path | None = None):
    """Generate (or regenerate) the synthetic splits and vocabulary on disk."""
    splits = generate_corpus(config.synth)
    out = Path(out_dir or config.corpus_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in splits.items():
        save_corpus(split, out / f"{name}.json")
    vocab = build_vocab(splits["train"], min_count=config.min_count)
    vocab.save(out / "vocab.json")
    return splits, vocab


def load_prepared_corpus(corpus_dir: str | Path):
    out = Path(corpus_dir)
    splits = {name: load_corpus(out / f"{name}.json") for name in ("train", "validation", "test")}
    return splits, Vocabulary.load(out / "vocab.json")


def train_variant_pair(
    config: PipelineConfig,
    splits: dict[str, CorpusSplit],
    vocab: Vocabulary,
    seed: int,
    run_dir: Path,
) -> tuple[TrainResult, TrainResult]:
    """Train the generation-only and the jointly trained model with one seed."""
    model_config = config.model_config(len(vocab), len(splits["train"].ontology))
    base_cfg = dataclasses.replace(config.training, lambda_weight=0.0, seed=seed,
                                   checkpoint_dir=str(run_dir))
    account_cfg = dataclasses.replace(config.training, lambda_weight=config.lambda_account,
                                      seed=seed, checkpoint_dir=str(run_dir))
    base = train(model_config, base_cfg, splits["train"], splits["validation"], vocab,
                 checkpoint_name=f"base_seed{seed}")
    account = train(model_config, account_cfg, splits["train"], splits["validation"], vocab,
                    checkpoint_name=f"account_seed{seed}")
    return base, account


@dataclass
class VariantEvaluation:
    reports: dict[str, MetricsReport]
    thresholds: Thresholds
    grid_table: list[dict]
    predictions: dict[str, list]
    corrections: dict[str, list[CorrectionResult]]


def tune_thresholds(
    account: Checkpoint,
    validation: CorpusSplit,
    vocab: Vocabulary,
    config: PipelineConfig,
    decodes: list[TurnDecode] | None = None,
) -> tuple[Thresholds, list[dict]]:
    decoder = StateDecoder(account, vocab, validation.ontology, max_new_tokens=config.max_new_tokens)
    decodes = decodes or decode_split(account, validation, vocab, max_new_tokens=config.max_new_tokens)
    return grid_search_thresholds(decodes, decoder, config.tau_fp_grid, config.tau_fn_grid)


def evaluate_variants(
    base: Checkpoint | None,
    account: Checkpoint,
    split: CorpusSplit,
    vocab: Vocabulary,
    thresholds: Thresholds,
    config: PipelineConfig,
    variants=VARIANTS,
    simulator=None,
    account_decodes: list[TurnDecode] | None = None,
) -> VariantEvaluation:
    """Evaluate the requested variants on one split, reusing decodes."""
    ontology = split.ontology
    golds = [turn.gold_state for _, _, turn in split.iter_turns()]
    reports: dict[str, MetricsReport] = {}
    predictions: dict[str, list] = {}
    corrections: dict[str, list[CorrectionResult]] = {}

    if "base" in variants:
        if base is None:
            raise ValueError("base variant requested without a base checkpoint")
        base_decodes = decode_split(base, split, vocab, max_new_tokens=config.max_new_tokens)
        preds = [d.decoded.state for d in base_decodes]
        reports["base"] = compute_report(preds, golds, ontology, variant="base")
        predictions["base"] = preds

    need_account = [v for v in variants if v != "base"]
    if need_account:
        decodes = account_decodes or decode_split(account, split, vocab, max_new_tokens=config.max_new_tokens)
        probs = [d.probs for d in decodes]
        decoder = StateDecoder(account, vocab, ontology, max_new_tokens=config.max_new_tokens)
        sources = [CachedValueSource(decoder, turn) for turn in decodes]

        if "account" in variants:
            preds = [d.decoded.state for d in decodes]
            reports["account"] = compute_report(preds, golds, ontology, probs=probs, variant="account")
            predictions["account"] = preds
        if "self-correct" in variants:
            results = [self_correct(t.decoded, t.probs, thresholds, src, ontology)
                       for t, src in zip(decodes, sources)]
            preds = [r.corrected for r in results]
            reports["self-correct"] = compute_report(preds, golds, ontology, probs=probs,
                                                     corrections=results, variant="self-correct")
            predictions["self-correct"] = preds
            corrections["self-correct"] = results
        if "oracle-correct" in variants:
            results = [oracle_correct(t.decoded, t.probs, thresholds, t.gold, ontology) for t in decodes]
            preds = [r.corrected for r in results]
            reports["oracle-correct"] = compute_report(preds, golds, ontology, probs=probs,
                                                       corrections=results, variant="oracle-correct")
            predictions["oracle-correct"] = preds
            corrections["oracle-correct"] = results
        if "user-correct" in variants:
            sim = simulator or OracleSimulator(binary_only=config.binary_friction)
            results = []
            for t, src in zip(decodes, sources):
                questions = build_questions(t.decoded, t.probs, thresholds, src, ontology)
                answers = sim.answer_all(t.gold, questions)
                results.append(apply_answers(t.decoded, questions, answers))
            preds = [r.corrected for r in results]
            reports["user-correct"] = compute_report(preds, golds, ontology, probs=probs,
                                                     corrections=results, variant="user-correct")
            predictions["user-correct"] = preds
            corrections["user-correct"] = results
    grid_table: list[dict] = []
    return VariantEvaluation(reports=reports, thresholds=thresholds, grid_table=grid_table,
                             predictions=predictions, corrections=corrections)


def sweep_thresholds(
    account: Checkpoint,
    split: CorpusSplit,
    vocab: Vocabulary,
    config: PipelineConfig,
    decodes: list[TurnDecode] | None = None,
) -> list[dict]:
    """One row per threshold setting: no-op, each tau_fp alone, each tau_fn
    alone; self-correction metrics plus cost, computed over shared decodes."""
    ontology = split.ontology
    decodes = decodes or decode_split(account, split, vocab, max_new_tokens=config.max_new_tokens)
    decoder = StateDecoder(account, vocab, ontology, max_new_tokens=config.max_new_tokens)
    sources = [CachedValueSource(decoder, turn) for turn in decodes]
    golds = [t.gold for t in decodes]
    probs = [t.probs for t in decodes]

    cells = [(0.0, 1.0)]
    cells += [(fp, 1.0) for fp in sorted(set(config.tau_fp_grid)) if fp != 0.0]
    cells += [(0.0, fn) for fn in sorted(set(config.tau_fn_grid), reverse=True) if fn != 1.0]
    rows = []
    for tau_fp, tau_fn in cells:
        thresholds = Thresholds(tau_fp, tau_fn)
        results = [self_correct(t.decoded, t.probs, thresholds, src, ontology)
                   for t, src in zip(decodes, sources)]
        report = compute_report([r.corrected for r in results], golds, ontology, probs=probs,
                                corrections=results, variant=f"fp{tau_fp:g}_fn{tau_fn:g}")
        rows.append({
            "tau_fp": tau_fp,
            "tau_fn": tau_fn,
            "jga": report.jga,
            "slot_f1": report.slot_f1,
            "fpr": report.fpr,
            "fnr": report.fnr,
            "additional_cost_percent": report.additional_cost,
        })
    return rows


def sweep_rows_to_csv(rows: list[dict]) -> str:
    from .metrics import round2

    header = "tau_fp,tau_fn,jga,slot_f1,fpr,fnr,additional_cost_percent"
    lines = [header]
    for r in rows:
        lines.append(",".join([
            f"{r['tau_fp']:g}", f"{r['tau_fn']:g}",
            *(f"{round2(r[k]):.2f}" for k in ("jga", "slot_f1", "fpr", "fnr", "additional_cost_percent")),
        ]))
    return "\n".join(lines) + "\n"


def ablate_lambda(
    config: PipelineConfig,
    splits: dict[str, CorpusSplit],
    vocab: Vocabulary,
    run_dir: Path,
    grid: tuple | None = None,
) -> list[dict]:
    """Train one model per classifier weight (same seed); report raw-generation
    accuracy on validation (selection) and test."""
    from .metrics import jga as jga_fn
    from .metrics import slot_f1 as slot_f1_fn

    grid = tuple(grid if grid is not None else config.lambda_grid)
    if not grid:
        raise ValueError("empty lambda grid")
    model_config = config.model_config(len(vocab), len(splits["train"].ontology))
    rows = []
    for lam in grid:
        cfg = dataclasses.replace(config.training, lambda_weight=lam, checkpoint_dir=str(run_dir))
        result = train(model_config, cfg, splits["train"], splits["validation"], vocab,
                       checkpoint_name=f"lambda_{lam:g}")
        val = decode_split(result.checkpoint, splits["validation"], vocab, config.max_new_tokens)
        test = decode_split(result.checkpoint, splits["test"], vocab, config.max_new_tokens)
        val_golds = [t.gold for t in val]
        test_golds = [t.gold for t in test]
        rows.append({
            "lambda": lam,
            "val_jga": jga_fn([t.decoded.state for t in val], val_golds),
            "test_jga": jga_fn([t.decoded.state for t in test], test_golds),
            "test_slot_f1": slot_f1_fn([t.decoded.state for t in test], test_golds),
        })
    return rows


def ablation_rows_to_csv(rows: list[dict]) -> str:
    from .metrics import round2

    lines = ["lambda,val_jga,test_jga,test_slot_f1"]
    for r in rows:
        lines.append(f"{r['lambda']:g}," + ",".join(
            f"{round2(r[k]):.2f}" for k in ("val_jga", "test_jga", "test_slot_f1")))
    return "\n".join(lines) + "\n"


# --- run records --------------------------------------------------------------

@dataclass
class RunRecord:
    run_id: str
    kind: str
    config: dict
    config_hash: str
    git_revision: str
    created_at: float
    corpus_hashes: dict[str, str] = field(default_factory=dict)
    checkpoints: dict[str, dict] = field(default_factory=dict)
    thresholds: dict | None = None
    reports: dict[str, dict] = field(default_factory=dict)
    tables: dict[str, list] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def save_run_record(record: RunRecord, runs_dir: str | Path) -> Path:
    runs = Path(runs_dir)
    runs.mkdir(parents=True, exist_ok=True)
    path = runs / f"{record.run_id}.json"
    path.write_text(json.dumps(record.to_dict(), indent=1, sort_keys=True) + "\n")
    index_path = runs / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else []
    entry = {"run_id": record.run_id, "kind": record.kind, "created_at": record.created_at}
    index = [e for e in index if e["run_id"] != record.run_id] + [entry]
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return path


def list_run_records(runs_dir: str | Path) -> list[dict]:
    index_path = Path(runs_dir) / "index.json"
    if not index_path.exists():
        return []
    return json.loads(index_path.read_text())


def load_run_record(runs_dir: str | Path, run_id: str) -> RunRecord:
    path = Path(runs_dir) / f"{run_id}.json"
    return RunRecord(**json.loads(path.read_text()))


def new_run_record(config: PipelineConfig, kind: str, seed: int) -> RunRecord:
    chash = config.content_hash()
    return RunRecord(
        run_id=f"{kind}-{chash[:8]}-seed{seed}",
        kind=kind,
        config=config.to_dict(),
        config_hash=chash,
        git_revision=git_revision(),
        created_at=time.time(),
    )


def write_variant_metrics(reports: dict[str, MetricsReport], out_dir: Path) -> None:
    """Byte-stable per-variant metric files (no timestamps)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for variant, report in reports.items():
        (out_dir / f"metrics_{variant.replace('-', '_')}.json").write_text(report.to_json() + "\n")
    (out_dir / "metrics.csv").write_text(reports_to_csv(list(reports.values())))


@dataclass
class SeedOutcome:
    seed: int
    thresholds: Thresholds
    grid_table: list[dict]
    reports: dict[str, MetricsReport]
    raw_validation_jga: float
    tuned_validation_jga: float
    checkpoint_hashes: dict[str, str]


def run_seed(
    config: PipelineConfig,
    splits: dict[str, CorpusSplit],
    vocab: Vocabulary,
    seed: int,
    run_dir: Path,
    variants=VARIANTS,
) -> SeedOutcome:
    """Train both models for one seed, tune thresholds on validation, and
    evaluate the requested variants on test."""
    from .metrics import jga as jga_fn

    base_res, account_res = train_variant_pair(config, splits, vocab, seed, run_dir)
    val_decodes = decode_split(account_res.checkpoint, splits["validation"], vocab,
                               max_new_tokens=config.max_new_tokens)
    thresholds, grid_table = tune_thresholds(account_res.checkpoint, splits["validation"], vocab,
                                             config, decodes=val_decodes)
    raw_val = jga_fn([d.decoded.state for d in val_decodes], [d.gold for d in val_decodes])
    tuned_val = max(row["jga"] for row in grid_table)
    evaluation = evaluate_variants(base_res.checkpoint, account_res.checkpoint, splits["test"],
                                   vocab, thresholds, config, variants=variants)
    return SeedOutcome(
        seed=seed,
        thresholds=thresholds,
        grid_table=grid_table,
        reports=evaluation.reports,
        raw_validation_jga=raw_val,
        tuned_validation_jga=tuned_val,
        checkpoint_hashes={"base": base_res.file_hash, "account": account_res.file_hash},
    )


def run_direction_study(
    config: PipelineConfig,
    seeds=(1, 2, 3),
    run_dir: str | Path | None = None,
    variants=VARIANTS,
) -> dict:
    """The full multi-seed pipeline: per-seed outcomes plus mean JGA per variant."""
    run_dir = Path(run_dir or config.run_dir)
    splits, vocab = prepare_corpus(config, run_dir / "corpus")
    outcomes = [run_seed(config, splits, vocab, seed, run_dir, variants=variants) for seed in seeds]
    means = {
        variant: float(np.mean([o.reports[variant].jga for o in outcomes]))
        for variant in variants if all(variant in o.reports for o in outcomes)
    }
    return {"outcomes": outcomes, "mean_jga": means, "splits": splits, "vocab": vocab}
