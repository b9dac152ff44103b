// Wire types mirroring the session service schemas (docs/api.md).

export interface SlotSpec {
  domain: string;
  slot: string;
  values: string[] | null;
}

export interface Ontology {
  slots: SlotSpec[];
}

export interface Thresholds {
  tau_fp: number;
  tau_fn: number;
}

export type StateMap = Record<string, string>;

export type QuestionKind = 'confirm_fp_candidate' | 'confirm_fn_candidate';

export interface FrictionQuestion {
  question_id: string;
  kind: QuestionKind;
  slot: string;
  value: string;
  confidence: number;
  rendered_text: string;
}

export type AnswerKind = 'agree' | 'disagree' | 'delete' | 'update';

export interface Answer {
  kind: AnswerKind;
  value?: string;
}

export interface CreateSessionResponse {
  session_id: string;
  ontology: Ontology;
  thresholds: Thresholds;
}

export interface TurnErrors {
  fp_slots: string[];
  fn_slots: string[];
  value_error_slots: string[];
}

export interface UserTurnResponse {
  turn_index: number;
  predicted_state: StateMap;
  slot_probabilities: Record<string, number>;
  friction_questions: FrictionQuestion[];
  state_committed: boolean;
  committed_state: StateMap;
  truncated: boolean;
  turn_errors?: TurnErrors;
}

export interface AppliedEdit {
  slot: string;
  value: string;
  confidence: number;
  source?: string;
}

export interface ConfirmationsResponse {
  committed_state: StateMap;
  applied: { removed: AppliedEdit[]; added: AppliedEdit[] };
  pending_question_ids: string[];
}

export interface ServiceErrorBody {
  code: string;
  message: string;
}

export class ServiceError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, body: ServiceErrorBody) {
    super(body.message);
    this.code = body.code;
    this.status = status;
  }
}
