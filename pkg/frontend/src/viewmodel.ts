// Pure render models for the console. The DOM layer only formats these;
// tests assert on them directly.

import { SessionSnapshot } from './session.js';
import { AnswerKind, FrictionQuestion } from './types.js';

export type RowStatus = 'committed' | 'pending' | 'added' | 'ghost';

export interface StateRow {
  slot: string;
  value: string;
  confidence: number;
  // amber: a kept pair whose confidence sits below the removal threshold
  amber: boolean;
  status: RowStatus;
  badge: 'added' | 'removed' | null;
}

export interface StatePanelModel {
  rows: StateRow[];
  removedRows: StateRow[];
  committedIndicator: boolean;
  thresholds: { tauFp: number; tauFn: number };
}

export function statePanelModel(snapshot: SessionSnapshot): StatePanelModel {
  const probs = snapshot.probabilities;
  const addedSlots = new Set(snapshot.lastApplied.added.map((e) => e.slot));
  const pending = snapshot.pendingQuestions;
  const rows: StateRow[] = [];
  const source = snapshot.committed ? snapshot.committedState : snapshot.predictedState;
  for (const [slot, value] of Object.entries(source)) {
    const confidence = probs[slot] ?? 0;
    rows.push({
      slot,
      value,
      confidence,
      amber: confidence < snapshot.thresholds.tau_fp,
      status: snapshot.committed ? 'committed' : 'pending',
      badge: addedSlots.has(slot) ? 'added' : null,
    });
  }
  // missing-slot candidates render as ghost rows until confirmed
  for (const question of pending) {
    if (question.kind === 'confirm_fn_candidate') {
      rows.push({
        slot: question.slot,
        value: question.value,
        confidence: question.confidence,
        amber: false,
        status: 'ghost',
        badge: null,
      });
    }
  }
  rows.sort((a, b) => a.slot.localeCompare(b.slot));
  const removedRows: StateRow[] = snapshot.lastApplied.removed.map((e) => ({
    slot: e.slot,
    value: e.value,
    confidence: e.confidence,
    amber: false,
    status: 'committed' as const,
    badge: 'removed' as const,
  }));
  return {
    rows,
    removedRows,
    committedIndicator: snapshot.committed,
    thresholds: { tauFp: snapshot.thresholds.tau_fp, tauFn: snapshot.thresholds.tau_fn },
  };
}

export interface QuestionCard {
  questionId: string;
  title: string;
  body: string;
  options: AnswerKind[];
  needsValueInput: boolean;
  answered: boolean;
}

export function questionCards(snapshot: SessionSnapshot): QuestionCard[] {
  return snapshot.pendingQuestions.map((q: FrictionQuestion) => ({
    questionId: q.question_id,
    title: q.kind === 'confirm_fp_candidate'
      ? `Keep ${q.slot} = "${q.value}"? (confidence ${q.confidence.toFixed(2)})`
      : `Did you mean ${q.slot} = "${q.value}"? (confidence ${q.confidence.toFixed(2)})`,
    body: q.rendered_text,
    options: q.kind === 'confirm_fp_candidate'
      ? ['agree', 'update', 'delete']
      : ['agree', 'disagree'],
    needsValueInput: q.kind === 'confirm_fp_candidate',
    answered: q.question_id in snapshot.stagedAnswers,
  }));
}

export function confidenceBar(confidence: number, width = 10): string {
  const filled = Math.round(Math.min(Math.max(confidence, 0), 1) * width);
  return '#'.repeat(filled) + '-'.repeat(width - filled);
}
