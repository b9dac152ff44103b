"""State correction from slot probabilities, plus threshold tuning.

Two passes over a generated state: drop each predicted pair whose slot
probability falls below the false-positive threshold, then walk the slots
missing from the ORIGINAL prediction in canonical order and, for each one
at or above the false-negative threshold, ask a value source for a value
and add the pair when one comes back. Kept pairs never change value. The
missing-slot set is computed from the original prediction, so a pair
removed in pass one is never re-added; thresholds where that would matter
(tau_fn < tau_fp) are flagged at construction.

(0, 1) disables both passes. The tuner grid-searches both thresholds
against validation joint goal accuracy over cached decodes; the no-op cell
is required to be in the grid, so tuned correction can never score below
raw generation on the tuning split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .decoding import CachedValueSource, DecodedState, StateDecoder, TurnDecode
from .ontology import DialogueState, Ontology, SlotId

logger = logging.getLogger(__name__)

DEFAULT_TAU_FP_GRID = (0.0, 0.05, 0.1, 0.2, 0.3)
DEFAULT_TAU_FN_GRID = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4)

SOURCE_SELF = "self_generated"
SOURCE_ORACLE = "oracle"
SOURCE_USER = "user"


@dataclass(frozen=True)
class Thresholds:
    tau_fp: float = 0.0
    tau_fn: float = 1.0

    def __post_init__(self):
        for v in (self.tau_fp, self.tau_fn):
            if not 0.0 <= v <= 1.0:
                raise ValueError("thresholds must lie in [0, 1]")
        if self.tau_fn < self.tau_fp:
            logger.warning(
                "thresholds (tau_fp=%.3g, tau_fn=%.3g) would re-add removed slots "
                "if the missing-slot set were recomputed; the corrector never re-adds",
                self.tau_fp, self.tau_fn,
            )

    @property
    def is_noop(self) -> bool:
        return self.tau_fp == 0.0 and self.tau_fn == 1.0


@dataclass
class CorrectionResult:
    corrected: DialogueState
    removed: list[tuple[SlotId, str, float]] = field(default_factory=list)
    added: list[tuple[SlotId, str, float, str]] = field(default_factory=list)
    cost_incurred: bool = False


def _as_state(b) -> DialogueState:
    return b.state if isinstance(b, DecodedState) else b


def self_correct(
    b,
    probs: np.ndarray,
    thresholds: Thresholds,
    value_source,
    ontology: Ontology,
) -> CorrectionResult:
    """Two-pass correction with generated values for the missing slots."""
    return _correct(b, probs, thresholds, ontology, value_source=value_source)


def oracle_correct(
    b,
    probs: np.ndarray,
    thresholds: Thresholds,
    gold: DialogueState,
    ontology: Ontology,
) -> CorrectionResult:
    """Upper-bound variant: pass two adds a slot only when the reference state
    has it, and uses the reference value."""
    return _correct(b, probs, thresholds, ontology, gold=gold)


def _correct(b, probs, thresholds, ontology, value_source=None, gold: DialogueState | None = None):
    state = _as_state(b)
    result = CorrectionResult(corrected=state)
    kept = {}
    for slot, value in state.pairs.items():
        p = float(probs[ontology.index(slot)])
        if p >= thresholds.tau_fp:
            kept[slot] = value
        else:
            result.removed.append((slot, value, p))
    original_slots = state.slots()
    for slot in ontology.slots:
        if slot in original_slots:
            continue
        p = float(probs[ontology.index(slot)])
        if p < thresholds.tau_fn:
            continue
        result.cost_incurred = True
        if gold is not None:
            value = gold.get(slot)
            source = SOURCE_ORACLE
        else:
            try:
                value = value_source(slot)
            except Exception:
                logger.exception("value source failed for %s; addition skipped", slot.name)
                value = None
            source = SOURCE_SELF
        if value is not None:
            kept[slot] = value
            result.added.append((slot, value, p, source))
    result.corrected = DialogueState(kept)
    return result


def grid_search_thresholds(
    decodes: list[TurnDecode],
    decoder: StateDecoder,
    tau_fp_grid=DEFAULT_TAU_FP_GRID,
    tau_fn_grid=DEFAULT_TAU_FN_GRID,
) -> tuple[Thresholds, list[dict]]:
    """Maximize joint goal accuracy over the threshold grid.

    Decoded states, probabilities, and generated values are computed once and
    shared across cells. Ties prefer the least intervention: smaller tau_fp,
    then larger tau_fn.
    """
    if 0.0 not in tau_fp_grid:
        raise ValueError("tau_fp grid must include 0 so the no-op cell is a candidate")
    if 1.0 not in tau_fn_grid:
        raise ValueError("tau_fn grid must include 1 so the no-op cell is a candidate")
    from .metrics import jga

    sources = [CachedValueSource(decoder, turn) for turn in decodes]
    golds = [turn.gold for turn in decodes]
    table = []
    best = None
    for tau_fp in sorted(set(tau_fp_grid)):
        for tau_fn in sorted(set(tau_fn_grid)):
            thresholds = Thresholds(tau_fp, tau_fn)
            corrected = [
                self_correct(turn.decoded, turn.probs, thresholds, source, decoder.ontology).corrected
                for turn, source in zip(decodes, sources)
            ]
            score = jga(corrected, golds)
            table.append({"tau_fp": tau_fp, "tau_fn": tau_fn, "jga": score})
            key = (score, -tau_fp, tau_fn)
            if best is None or key > best[0]:
                best = (key, thresholds)
    return best[1], table
