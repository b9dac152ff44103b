// Typed REST client for the session service. The fetch implementation is
// injectable so tests can run against a mock server; network timeouts are
// retried once, HTTP errors surface as ServiceError with the server's code.

import {
  Answer,
  ConfirmationsResponse,
  CreateSessionResponse,
  ServiceError,
  Thresholds,
  UserTurnResponse,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClientOptions {
  baseUrl?: string;
  fetchImpl?: FetchLike;
  timeoutMs?: number;
}

export class ServiceClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;
  private readonly timeoutMs: number;

  constructor(options: ClientOptions = {}) {
    this.baseUrl = (options.baseUrl ?? '').replace(/\/$/, '');
    this.fetchImpl = options.fetchImpl ?? ((url, init) => fetch(url, init));
    this.timeoutMs = options.timeoutMs ?? 10_000;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: { 'content-type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    };
    let lastError: unknown;
    for (let attempt = 0; attempt < 2; attempt += 1) {
      try {
        const response = await this.withTimeout(this.fetchImpl(`${this.baseUrl}${path}`, init));
        const text = await response.text();
        const payload = text ? JSON.parse(text) : {};
        if (!response.ok) {
          throw new ServiceError(response.status, {
            code: payload.code ?? 'http_error',
            message: payload.message ?? `${method} ${path} failed with ${response.status}`,
          });
        }
        return payload as T;
      } catch (error) {
        if (error instanceof ServiceError) throw error; // server spoke; do not retry
        lastError = error;
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  private withTimeout(promise: Promise<Response>): Promise<Response> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error('request timed out')), this.timeoutMs);
      promise.then(
        (value) => { clearTimeout(timer); resolve(value); },
        (error) => { clearTimeout(timer); reject(error); },
      );
    });
  }

  createSession(checkpointId: string, thresholds?: Thresholds): Promise<CreateSessionResponse> {
    const body: Record<string, unknown> = { checkpoint_id: checkpointId };
    if (thresholds) body.thresholds = thresholds;
    return this.request('POST', '/sessions', body);
  }

  sendUserTurn(sessionId: string, userUtterance: string, systemUtterance = ''): Promise<UserTurnResponse> {
    return this.request('POST', `/sessions/${sessionId}/user_turn`, {
      user_utterance: userUtterance,
      system_utterance: systemUtterance,
    });
  }

  sendConfirmations(
    sessionId: string,
    answers: Array<{ question_id: string; answer: Answer }>,
  ): Promise<ConfirmationsResponse> {
    return this.request('POST', `/sessions/${sessionId}/confirmations`, { answers });
  }

  async updateThresholds(sessionId: string, thresholds: Thresholds): Promise<Thresholds> {
    const payload = await this.request<{ thresholds: Thresholds }>(
      'POST', `/sessions/${sessionId}/thresholds`, thresholds);
    return payload.thresholds;
  }
}
