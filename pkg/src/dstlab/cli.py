"""Command-line pipeline: synth, train, eval, sweep, ablate-lambda, serve, demo.

Every command reads one JSON config file; ``--set dotted.path=value`` flags
override individual fields. Commands exit 0 on success and print a JSON
error object to stderr otherwise; each one leaves a run record (config hash,
corpus hashes, git revision, outputs) in the run directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def _parse_override(raw: str) -> tuple[list[str], object]:
    if "=" not in raw:
        raise ConfigError([f"override {raw!r} is not of the form path=value"])
    path, value = raw.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return path.split("."), parsed


def load_config_dict(path: str | None, overrides: list[str]) -> dict:
    config = {}
    if path:
        try:
            config = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config file {path}: {exc}"])
    for raw in overrides or []:
        keys, value = _parse_override(raw)
        node = config
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override path {'.'.join(keys)} crosses a non-object field"])
        node[keys[-1]] = value
    return config


def validate_config(config: dict) -> list[str]:
    """Collect every violated field instead of stopping at the first."""
    violations = []
    synth = config.get("synth", {})
    checks = [
        ("synth.domains", synth.get("domains", 3), lambda v: 1 <= v <= 5),
        ("synth.slots_per_domain", synth.get("slots_per_domain", 4), lambda v: v >= 2),
        ("synth.value_set_size", synth.get("value_set_size", 6), lambda v: v >= 1),
        ("synth.n_train", synth.get("n_train", 2000), lambda v: v >= 1),
        ("synth.n_validation", synth.get("n_validation", 300), lambda v: v >= 1),
        ("synth.n_test", synth.get("n_test", 300), lambda v: v >= 1),
    ]
    training = config.get("training", {})
    checks += [
        ("training.lambda_weight", training.get("lambda_weight", 0.25), lambda v: 0.0 <= v <= 1.0),
        ("training.epochs", training.get("epochs", 4), lambda v: v >= 1),
        ("training.batch_size", training.get("batch_size", 8), lambda v: v >= 1),
        ("training.learning_rate", training.get("learning_rate", 5e-5), lambda v: v > 0),
    ]
    lam = config.get("lambda_account", 0.25)
    checks.append(("lambda_account", lam, lambda v: 0.0 <= v <= 1.0))
    for name, value, ok in checks:
        try:
            valid = ok(value)
        except TypeError:
            valid = False
        if not valid:
            violations.append(f"{name}={value!r}")
    for rate in ("overwrite_rate", "dontcare_rate", "chatter_rate", "distractor_rate",
                 "ambiguity_rate", "multi_domain_rate"):
        v = synth.get(rate)
        if v is not None and not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
            violations.append(f"synth.{rate}={v!r}")
    return violations


def build_pipeline_config(args) -> "PipelineConfig":
    from .experiment import PipelineConfig

    config = load_config_dict(getattr(args, "config", None), getattr(args, "set", None) or [])
    violations = validate_config(config)
    if violations:
        raise ConfigError([f"invalid field {v}" for v in violations])
    config.pop("serve", None)
    return PipelineConfig.from_dict(config)


def _serve_settings(args) -> dict:
    config = load_config_dict(getattr(args, "config", None), getattr(args, "set", None) or [])
    serve = config.get("serve", {})
    host = os.environ.get("DSTLAB_HOST", serve.get("host", "127.0.0.1"))
    port = int(os.environ.get("DSTLAB_PORT", serve.get("port", 8470)))
    return {"host": host, "port": port}


def cmd_synth(args) -> int:
    from .corpus_io import corpus_hash
    from .experiment import new_run_record, prepare_corpus, save_run_record

    config = build_pipeline_config(args)
    splits, vocab = prepare_corpus(config, args.out)
    record = new_run_record(config, "synth", config.synth.seed)
    record.corpus_hashes = {name: corpus_hash(split) for name, split in splits.items()}
    save_run_record(record, config.run_dir)
    for name, split in splits.items():
        print(f"{name}: {len(split.dialogues)} dialogues, {split.n_turns} turns")
    print(f"vocabulary: {len(vocab)} tokens -> {Path(args.out or config.corpus_dir) / 'vocab.json'}")
    return 0


def _load_corpus_for(config, args):
    from .experiment import load_prepared_corpus, prepare_corpus

    corpus_dir = Path(getattr(args, "corpus", None) or config.corpus_dir)
    if (corpus_dir / "train.json").exists():
        return load_prepared_corpus(corpus_dir)
    return prepare_corpus(config, corpus_dir)


def cmd_train(args) -> int:
    from .corpus_io import corpus_hash
    from .experiment import new_run_record, save_run_record
    from .training import train

    config = build_pipeline_config(args)
    splits, vocab = _load_corpus_for(config, args)
    run_dir = Path(config.run_dir)
    if args.lambda_grid:
        from .experiment import ablate_lambda, ablation_rows_to_csv

        rows = ablate_lambda(config, splits, vocab, run_dir)
        csv_text = ablation_rows_to_csv(rows)
        out = run_dir / "lambda_grid.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(csv_text)
        print(csv_text, end="")
        best = max(rows, key=lambda r: (r["val_jga"], -r["lambda"]))
        print(f"best lambda by validation jga: {best['lambda']:g}")
        return 0
    lam = config.lambda_account if args.lam is None else args.lam
    training = dataclasses.replace(config.training, lambda_weight=lam,
                                   seed=args.seed if args.seed is not None else config.training.seed,
                                   checkpoint_dir=str(run_dir))
    model_config = config.model_config(len(vocab), len(splits["train"].ontology))
    result = train(model_config, training, splits["train"], splits["validation"], vocab,
                   checkpoint_name=args.name or f"model_lambda{lam:g}_seed{training.seed}")
    record = new_run_record(config, "train", training.seed)
    record.corpus_hashes = {name: corpus_hash(split) for name, split in splits.items()}
    record.checkpoints = {"model": {"path": str(result.path), "hash": result.file_hash,
                                    "lambda": lam, "best_epoch": result.report.best_epoch}}
    save_run_record(record, config.run_dir)
    print(f"checkpoint: {result.path} (sha256 {result.file_hash[:12]})")
    print(f"validation loss: lm {result.report.lm:.4f} bce {result.report.bce:.4f} "
          f"joint {result.report.account:.4f} (epoch {result.report.best_epoch})")
    return 0


def _resolve_checkpoints(config, splits, vocab, args, run_dir):
    from .experiment import train_variant_pair
    from .model import load_checkpoint

    ontology_hash = splits["train"].ontology.content_hash()
    vocab_hash = vocab.content_hash()
    if args.base_checkpoint and args.account_checkpoint:
        base = load_checkpoint(args.base_checkpoint, ontology_hash, vocab_hash)
        account = load_checkpoint(args.account_checkpoint, ontology_hash, vocab_hash)
        return base, account, {}
    seed = args.seed if args.seed is not None else config.training.seed
    base_res, account_res = train_variant_pair(config, splits, vocab, seed, run_dir)
    meta = {
        "base": {"path": str(base_res.path), "hash": base_res.file_hash},
        "account": {"path": str(account_res.path), "hash": account_res.file_hash},
    }
    return base_res.checkpoint, account_res.checkpoint, meta


def cmd_eval(args) -> int:
    from .corpus_io import corpus_hash
    from .experiment import (
        VARIANTS,
        evaluate_variants,
        new_run_record,
        save_run_record,
        tune_thresholds,
        write_variant_metrics,
    )
    from .metrics import render_table

    config = build_pipeline_config(args)
    splits, vocab = _load_corpus_for(config, args)
    run_dir = Path(config.run_dir)
    variants = VARIANTS if args.variant == "all" else tuple(args.variant.split(","))
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError([f"unknown variant {v!r}" for v in unknown])
    base, account, ckpt_meta = _resolve_checkpoints(config, splits, vocab, args, run_dir)
    thresholds, grid_table = tune_thresholds(account, splits["validation"], vocab, config)
    seed = args.seed if args.seed is not None else config.training.seed
    tuned_path = _save_tuned_checkpoint(account, thresholds, run_dir, seed)
    evaluation = evaluate_variants(base if "base" in variants else None, account,
                                   splits["test"], vocab, thresholds, config, variants=variants)
    record = new_run_record(config, "eval", seed)
    record.corpus_hashes = {name: corpus_hash(split) for name, split in splits.items()}
    record.checkpoints = {**ckpt_meta, "account_tuned": {"path": str(tuned_path)}}
    record.thresholds = {"tau_fp": thresholds.tau_fp, "tau_fn": thresholds.tau_fn}
    record.reports = {v: r.rounded() for v, r in evaluation.reports.items()}
    record.tables["threshold_grid"] = grid_table
    save_run_record(record, config.run_dir)
    write_variant_metrics(evaluation.reports, run_dir / f"eval-seed{seed}")
    print(f"tuned checkpoint (thresholds embedded): {tuned_path}")
    print(render_table([evaluation.reports[v] for v in variants if v in evaluation.reports],
                       title=f"test metrics (tau_fp={thresholds.tau_fp:g}, tau_fn={thresholds.tau_fn:g})"))
    return 0


def _save_tuned_checkpoint(account, thresholds, run_dir, seed):
    """Re-save the jointly trained checkpoint with its tuned thresholds, so
    `serve` sessions pick them up by default."""
    from .model import Checkpoint, save_checkpoint

    tuned = Checkpoint(
        config=account.config,
        params=account.params,
        ontology_hash=account.ontology_hash,
        vocab_hash=account.vocab_hash,
        extra={**account.extra,
               "thresholds": {"tau_fp": thresholds.tau_fp, "tau_fn": thresholds.tau_fn}},
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / f"account_tuned_seed{seed}.ckpt"
    save_checkpoint(tuned, path)
    return path


def cmd_sweep(args) -> int:
    from .experiment import new_run_record, save_run_record, sweep_rows_to_csv, sweep_thresholds

    config = build_pipeline_config(args)
    splits, vocab = _load_corpus_for(config, args)
    run_dir = Path(config.run_dir)
    base, account, ckpt_meta = _resolve_checkpoints(config, splits, vocab, args, run_dir)
    rows = sweep_thresholds(account, splits["test"], vocab, config)
    csv_text = sweep_rows_to_csv(rows)
    out = run_dir / "threshold_sweep.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    seed = args.seed if args.seed is not None else config.training.seed
    record = new_run_record(config, "sweep", seed)
    record.checkpoints = ckpt_meta
    record.tables["threshold_sweep"] = rows
    save_run_record(record, config.run_dir)
    print(csv_text, end="")
    return 0


def cmd_ablate_lambda(args) -> int:
    from .experiment import ablate_lambda, ablation_rows_to_csv, new_run_record, save_run_record

    config = build_pipeline_config(args)
    splits, vocab = _load_corpus_for(config, args)
    run_dir = Path(config.run_dir)
    rows = ablate_lambda(config, splits, vocab, run_dir)
    csv_text = ablation_rows_to_csv(rows)
    out = run_dir / "lambda_ablation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    record = new_run_record(config, "ablate-lambda", config.training.seed)
    record.tables["lambda_ablation"] = rows
    save_run_record(record, config.run_dir)
    print(csv_text, end="")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .model import load_checkpoint
    from .ontology import Ontology
    from .service import CheckpointRegistry, create_app

    config = build_pipeline_config(args)
    splits, vocab = _load_corpus_for(config, args)
    settings = _serve_settings(args)
    registry = CheckpointRegistry()
    ontology = splits["train"].ontology
    for spec in args.checkpoint or []:
        name, _, path = spec.rpartition("=") if "=" in spec else ("default", "", spec)
        ckpt = load_checkpoint(path, ontology.content_hash(), vocab.content_hash())
        registry.add(name or "default", ckpt, vocab, ontology)
    if not (args.checkpoint or []):
        raise ConfigError(["serve needs at least one --checkpoint [name=]path"])
    app = create_app(registry, runs_dir=config.run_dir)
    logger.info("serving on %s:%d with checkpoints %s", settings["host"], settings["port"], registry.ids())
    uvicorn.run(app, host=settings["host"], port=settings["port"], log_level="info")
    return 0


def cmd_demo(args) -> int:
    from .correction import Thresholds, self_correct
    from .decoding import CachedValueSource, StateDecoder, TurnDecode, decode_split
    from .model import load_checkpoint

    config = build_pipeline_config(args)
    splits, vocab = _load_corpus_for(config, args)
    split = splits["test"]
    ontology = split.ontology
    ckpt = load_checkpoint(args.account_checkpoint, ontology.content_hash(), vocab.content_hash())
    stored = ckpt.extra.get("thresholds")
    thresholds = Thresholds(**stored) if stored else Thresholds(args.tau_fp, args.tau_fn)
    dialogue = next((d for d in split.dialogues if d.id == args.dialogue_id), split.dialogues[0])
    decoder = StateDecoder(ckpt, vocab, ontology, max_new_tokens=config.max_new_tokens)
    from .codec import encode_context

    print(f"dialogue {dialogue.id} (thresholds tau_fp={thresholds.tau_fp:g}, tau_fn={thresholds.tau_fn:g})")
    for t, turn in enumerate(dialogue.turns):
        if turn.system_utterance:
            print(f"  system: {turn.system_utterance}")
        print(f"  user:   {turn.user_utterance}")
        context = encode_context(dialogue.turns[: t + 1], ontology, vocab,
                                 max_len=ckpt.config.max_seq_len - 64)
        decoded, probs = decoder.decode(context)
        print(f"    predicted: {decoded.state}")
        confident = ", ".join(
            f"{s.name}={probs[ontology.index(s)]:.2f}" for s in ontology.slots
            if probs[ontology.index(s)] >= 0.05
        )
        print(f"    slot probabilities: {confident or '(all < 0.05)'}")
        source = CachedValueSource(decoder, TurnDecode(dialogue.id, t, context, decoded, probs, turn.gold_state))
        result = self_correct(decoded, probs, thresholds, source, ontology)
        for slot, value, p in result.removed:
            print(f"    removed {slot.name}={value} (p={p:.2f})")
        for slot, value, p, src in result.added:
            print(f"    added   {slot.name}={value} (p={p:.2f}, {src})")
        print(f"    corrected: {result.corrected}")
        print(f"    gold:      {turn.gold_state}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dstlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True):
        p.add_argument("--config", "-c", help="JSON config file")
        p.add_argument("--set", action="append", metavar="PATH=VALUE",
                       help="override a config field by dotted path")
        if corpus:
            p.add_argument("--corpus", help="corpus directory (default from config)")

    p = sub.add_parser("synth", help="generate the seeded synthetic corpus")
    common(p, corpus=False)
    p.add_argument("--out", help="output directory (default: config corpus_dir)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model (or a lambda grid)")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float, help="classifier loss weight")
    p.add_argument("--lambda-grid", action="store_true", help="train the whole lambda grid")
    p.add_argument("--seed", type=int)
    p.add_argument("--name", help="checkpoint name")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate model variants on the test split")
    common(p)
    p.add_argument("--variant", default="all",
                   help="comma list of base,account,self-correct,oracle-correct,user-correct or 'all'")
    p.add_argument("--base-checkpoint")
    p.add_argument("--account-checkpoint")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="threshold sweep table (CSV)")
    common(p)
    p.add_argument("--base-checkpoint")
    p.add_argument("--account-checkpoint")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate-lambda", help="lambda ablation table (CSV)")
    common(p)
    p.set_defaults(func=cmd_ablate_lambda)

    p = sub.add_parser("serve", help="start the session service")
    common(p)
    p.add_argument("--checkpoint", action="append", metavar="[NAME=]PATH",
                   help="checkpoint to expose (repeatable)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demo", help="replay one dialogue with probabilities and corrections")
    common(p)
    p.add_argument("--account-checkpoint", required=True)
    p.add_argument("--dialogue-id")
    p.add_argument("--tau-fp", type=float, default=0.1)
    p.add_argument("--tau-fn", type=float, default=0.5)
    p.set_defaults(func=cmd_demo)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        json.dump({"error": {"code": "config_validation", "violations": exc.violations}}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - uniform machine-readable failure surface
        logger.exception("command failed")
        json.dump({"error": {"code": "runtime", "message": str(exc)}}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
