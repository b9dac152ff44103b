"""Desk-scale dialogue state tracking with a per-slot confidence head,
threshold-tuned state correction, and human-in-the-loop friction."""

__version__ = "0.1.0"

from .correction import Thresholds, oracle_correct, self_correct
from .metrics import MetricsReport, compute_report, error_rates, jga, roc_auc, slot_f1
from .ontology import CorpusSplit, Dialogue, DialogueState, Ontology, SlotId, Turn, slot_labels
from .synth import SynthConfig, generate_corpus

__all__ = [
    "CorpusSplit", "Dialogue", "DialogueState", "MetricsReport", "Ontology", "SlotId",
    "SynthConfig", "Thresholds", "Turn", "compute_report", "error_rates", "generate_corpus",
    "jga", "oracle_correct", "roc_auc", "self_correct", "slot_f1", "slot_labels",
]
