// Session controller: owns the conversation state machine.
//
// Invariants: at most one request in flight (the UI disables sends while
// busy); the state panel only ever renders server-confirmed data; pending
// friction questions block the committed indicator; staged threshold
// changes apply from the next turn onward; answers for a turn are batched
// into a single confirmations call once every question is answered.

import { ServiceClient } from './api.js';
import {
  Answer,
  AppliedEdit,
  ConfirmationsResponse,
  FrictionQuestion,
  Ontology,
  StateMap,
  Thresholds,
  UserTurnResponse,
} from './types.js';

export interface TranscriptTurn {
  system: string;
  user: string;
  committedState: StateMap;
}

export interface SessionSnapshot {
  sessionId: string | null;
  busy: boolean;
  committed: boolean;
  committedState: StateMap;
  predictedState: StateMap;
  probabilities: Record<string, number>;
  pendingQuestions: FrictionQuestion[];
  stagedAnswers: Record<string, Answer>;
  lastApplied: { removed: AppliedEdit[]; added: AppliedEdit[] };
  thresholds: Thresholds;
  stagedThresholds: Thresholds | null;
  transcript: TranscriptTurn[];
  error: string | null;
}

export class SessionController {
  private client: ServiceClient;
  private checkpointId: string;
  private sessionId: string | null = null;
  private ontologyValue: Ontology = { slots: [] };
  private thresholds: Thresholds = { tau_fp: 0, tau_fn: 1 };
  private stagedThresholds: Thresholds | null = null;
  private busy = false;
  private committedState: StateMap = {};
  private predictedState: StateMap = {};
  private probabilities: Record<string, number> = {};
  private pendingQuestions: FrictionQuestion[] = [];
  private stagedAnswers: Record<string, Answer> = {};
  private lastApplied: { removed: AppliedEdit[]; added: AppliedEdit[] } = { removed: [], added: [] };
  private transcript: TranscriptTurn[] = [];
  private lastError: string | null = null;
  private listeners: Array<(snapshot: SessionSnapshot) => void> = [];

  constructor(client: ServiceClient, checkpointId: string) {
    this.client = client;
    this.checkpointId = checkpointId;
  }

  onChange(listener: (snapshot: SessionSnapshot) => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    const snapshot = this.snapshot();
    for (const listener of this.listeners) listener(snapshot);
  }

  get ontology(): Ontology {
    return this.ontologyValue;
  }

  snapshot(): SessionSnapshot {
    return {
      sessionId: this.sessionId,
      busy: this.busy,
      committed: this.pendingQuestions.length === 0,
      committedState: { ...this.committedState },
      predictedState: { ...this.predictedState },
      probabilities: { ...this.probabilities },
      pendingQuestions: [...this.pendingQuestions],
      stagedAnswers: { ...this.stagedAnswers },
      lastApplied: this.lastApplied,
      thresholds: { ...this.thresholds },
      stagedThresholds: this.stagedThresholds ? { ...this.stagedThresholds } : null,
      transcript: this.transcript.map((t) => ({ ...t, committedState: { ...t.committedState } })),
      error: this.lastError,
    };
  }

  private async guarded<T>(work: () => Promise<T>): Promise<T> {
    if (this.busy) throw new Error('a request is already in flight');
    this.busy = true;
    this.lastError = null;
    this.notify();
    try {
      return await work();
    } catch (error) {
      this.lastError = error instanceof Error ? error.message : String(error);
      throw error;
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  async start(thresholds?: Thresholds): Promise<void> {
    await this.guarded(async () => {
      const created = await this.client.createSession(this.checkpointId, thresholds);
      this.sessionId = created.session_id;
      this.ontologyValue = created.ontology;
      this.thresholds = created.thresholds;
      this.committedState = {};
      this.predictedState = {};
      this.pendingQuestions = [];
      this.stagedAnswers = {};
      this.transcript = [];
    });
  }

  adjustThresholds(tauFp: number, tauFn: number): void {
    // takes effect from the next turn; nothing is sent until then
    this.stagedThresholds = { tau_fp: tauFp, tau_fn: tauFn };
    this.notify();
  }

  async sendTurn(text: string): Promise<UserTurnResponse> {
    if (!this.sessionId) throw new Error('no active session');
    if (this.pendingQuestions.length > 0) {
      throw new Error('answer the pending questions before the next turn');
    }
    return this.guarded(async () => {
      if (this.stagedThresholds) {
        this.thresholds = await this.client
          .updateThresholds(this.sessionId as string, this.stagedThresholds);
        this.stagedThresholds = null;
      }
      const response = await this.client.sendUserTurn(this.sessionId as string, text);
      this.predictedState = response.predicted_state;
      this.probabilities = response.slot_probabilities;
      this.pendingQuestions = response.friction_questions;
      this.stagedAnswers = {};
      this.lastApplied = { removed: [], added: [] };
      this.transcript.push({ system: '', user: text, committedState: { ...response.committed_state } });
      this.committedState = response.committed_state;
      if (response.state_committed) {
        this.transcript[this.transcript.length - 1].committedState = { ...response.committed_state };
      }
      return response;
    });
  }

  /** Stage one answer; fires the single confirmations call once every
   * pending question has an answer. */
  async answerQuestion(questionId: string, answer: Answer): Promise<ConfirmationsResponse | null> {
    if (!this.pendingQuestions.some((q) => q.question_id === questionId)) {
      throw new Error(`unknown question ${questionId}`);
    }
    this.stagedAnswers[questionId] = answer;
    this.notify();
    const unanswered = this.pendingQuestions.filter((q) => !(q.question_id in this.stagedAnswers));
    if (unanswered.length > 0) return null;
    return this.flushAnswers();
  }

  /** Send whatever answers are staged (used by the "skip rest" control). */
  async flushAnswers(): Promise<ConfirmationsResponse> {
    if (!this.sessionId) throw new Error('no active session');
    const batch = Object.entries(this.stagedAnswers).map(([question_id, answer]) => ({
      question_id,
      answer,
    }));
    return this.guarded(async () => {
      const response = await this.client.sendConfirmations(this.sessionId as string, batch);
      this.committedState = response.committed_state;
      this.lastApplied = response.applied;
      this.pendingQuestions = [];
      this.stagedAnswers = {};
      if (this.transcript.length > 0) {
        this.transcript[this.transcript.length - 1].committedState = { ...response.committed_state };
      }
      return response;
    });
  }
}
