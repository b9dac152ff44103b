"""Evaluation suite: joint goal accuracy, slot F1, turn-level error rates,
ranking-based calibration, and correction cost accounting.

Error taxonomy per turn: a false positive slot is predicted but absent from
the reference slot set, a false negative slot is referenced but missing from
the prediction, and a value error is a slot present in both with different
values. The three sets are disjoint by construction. FPR/FNR/VER are the
percentage of turns with at least one error of that kind; a turn counts
toward joint goal accuracy exactly when all three sets are empty.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .correction import CorrectionResult
from .ontology import DialogueState, Ontology, SlotId


def round2(x: float) -> float:
    """Two decimals, half-up (reporting convention)."""
    from decimal import ROUND_HALF_UP, Decimal

    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class TurnErrorProfile:
    fp_slots: frozenset[SlotId]
    fn_slots: frozenset[SlotId]
    value_error_slots: frozenset[SlotId]

    @property
    def clean(self) -> bool:
        return not (self.fp_slots or self.fn_slots or self.value_error_slots)


def turn_errors(prediction: DialogueState, gold: DialogueState) -> TurnErrorProfile:
    pred_pairs, gold_pairs = prediction.pairs, gold.pairs
    fp = {s for s in pred_pairs if s not in gold_pairs}
    fn = {s for s in gold_pairs if s not in pred_pairs}
    ve = {s for s in pred_pairs if s in gold_pairs and pred_pairs[s] != gold_pairs[s]}
    return TurnErrorProfile(frozenset(fp), frozenset(fn), frozenset(ve))


def _check_lengths(predictions, golds):
    if len(predictions) != len(golds):
        raise ValueError("prediction/reference lists differ in length")
    if not predictions:
        raise ValueError("need at least one turn")


def jga(predictions: list[DialogueState], golds: list[DialogueState]) -> float:
    """Percent of turns whose predicted state equals the reference exactly."""
    _check_lengths(predictions, golds)
    hits = sum(1 for p, g in zip(predictions, golds) if p == g)
    return 100.0 * hits / len(predictions)


def slot_f1(predictions: list[DialogueState], golds: list[DialogueState]) -> float:
    """Micro-averaged F1 over (slot, value) pairs; a value error costs one
    false positive and one false negative."""
    _check_lengths(predictions, golds)
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pred_pairs = set(pred.pairs.items())
        gold_pairs = set(gold.pairs.items())
        tp += len(pred_pairs & gold_pairs)
        fp += len(pred_pairs - gold_pairs)
        fn += len(gold_pairs - pred_pairs)
    denom = 2 * tp + fp + fn
    return 100.0 if denom == 0 else 200.0 * tp / denom


def error_rates(predictions: list[DialogueState], golds: list[DialogueState]) -> dict[str, float]:
    """Turn-level rates: percent of turns with any false positive, any false
    negative, any value error."""
    _check_lengths(predictions, golds)
    n = len(predictions)
    fpr = fnr = ver = 0
    for pred, gold in zip(predictions, golds):
        profile = turn_errors(pred, gold)
        fpr += bool(profile.fp_slots)
        fnr += bool(profile.fn_slots)
        ver += bool(profile.value_error_slots)
    return {"fpr": 100.0 * fpr / n, "fnr": 100.0 * fnr / n, "ver": 100.0 * ver / n}


def roc_auc(scored_pairs: list[tuple[float, int]]) -> float | None:
    """Probability that a random positive outranks a random negative (ties
    count half), via average ranks. None when only one class is present."""
    if not scored_pairs:
        return None
    scores = np.asarray([s for s, _ in scored_pairs], dtype=np.float64)
    labels = np.asarray([l for _, l in scored_pairs], dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = ranks[labels == 1].sum()
    auc = (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return 100.0 * auc


def score_pairs(
    predictions: list[DialogueState],
    probs: list[np.ndarray],
    golds: list[DialogueState],
    ontology: Ontology,
) -> list[tuple[float, int]]:
    """(slot probability, pair-in-reference) for every predicted pair."""
    pairs = []
    for pred, p, gold in zip(predictions, probs, golds):
        for slot, value in pred.pairs.items():
            pairs.append((float(p[ontology.index(slot)]), int(gold.get(slot) == value)))
    return pairs


def additional_cost(results: list[CorrectionResult]) -> dict[str, float]:
    """Percent of turns that invoked value generation, and the mean number of
    added slots over those turns."""
    if not results:
        return {"percent": 0.0, "mean_added": 0.0}
    costed = [r for r in results if r.cost_incurred]
    percent = 100.0 * len(costed) / len(results)
    mean_added = float(np.mean([len(r.added) for r in costed])) if costed else 0.0
    return {"percent": percent, "mean_added": mean_added}


@dataclass
class MetricsReport:
    jga: float
    slot_f1: float
    fpr: float
    fnr: float
    ver: float
    roc_auc: float | None
    additional_cost: float
    mean_added_per_cost_turn: float
    n_turns: int
    variant: str = ""

    def rounded(self) -> dict:
        out = {
            "variant": self.variant,
            "jga": round2(self.jga),
            "slot_f1": round2(self.slot_f1),
            "fpr": round2(self.fpr),
            "fnr": round2(self.fnr),
            "ver": round2(self.ver),
            "roc_auc": None if self.roc_auc is None else round2(self.roc_auc),
            "additional_cost": round2(self.additional_cost),
            "mean_added_per_cost_turn": round2(self.mean_added_per_cost_turn),
            "n_turns": self.n_turns,
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.rounded(), sort_keys=True)


def compute_report(
    predictions: list[DialogueState],
    golds: list[DialogueState],
    ontology: Ontology,
    probs: list[np.ndarray] | None = None,
    corrections: list[CorrectionResult] | None = None,
    variant: str = "",
) -> MetricsReport:
    rates = error_rates(predictions, golds)
    auc = None
    if probs is not None:
        auc = roc_auc(score_pairs(predictions, probs, golds, ontology))
    cost = additional_cost(corrections or [])
    return MetricsReport(
        jga=jga(predictions, golds),
        slot_f1=slot_f1(predictions, golds),
        fpr=rates["fpr"], fnr=rates["fnr"], ver=rates["ver"],
        roc_auc=auc,
        additional_cost=cost["percent"],
        mean_added_per_cost_turn=cost["mean_added"],
        n_turns=len(predictions),
        variant=variant,
    )


_CSV_FIELDS = ("variant", "jga", "slot_f1", "fpr", "fnr", "ver", "roc_auc",
               "additional_cost", "mean_added_per_cost_turn", "n_turns")


def reports_to_csv(reports: list[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        row = r.rounded()
        row["roc_auc"] = "" if row["roc_auc"] is None else row["roc_auc"]
        writer.writerow(row)
    return buf.getvalue()


def render_table(reports: list[MetricsReport], title: str = "") -> str:
    """Plain-text results table grouped by variant."""
    header = f"{'variant':<16} {'JGA':>7} {'Slot-F1':>8} {'FPR':>7} {'FNR':>7} {'VER':>7} {'AUC':>7} {'Cost%':>7}"
    lines = [title, header, "-" * len(header)] if title else [header, "-" * len(header)]
    for r in reports:
        d = r.rounded()
        auc = "-" if d["roc_auc"] is None else f"{d['roc_auc']:.2f}"
        lines.append(
            f"{d['variant']:<16} {d['jga']:>7.2f} {d['slot_f1']:>8.2f} {d['fpr']:>7.2f} "
            f"{d['fnr']:>7.2f} {d['ver']:>7.2f} {auc:>7} {d['additional_cost']:>7.2f}"
        )
    return "\n".join(lines)
