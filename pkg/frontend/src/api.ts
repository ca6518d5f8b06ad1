/** Thin fetch client for the workbench HTTP API.
 *
 * Submissions are retry-safe: every screening submit carries a client token
 * the server deduplicates on, so a retried request lands on the same stored
 * submission instead of a SessionClosed error.
 */

import type { Decision, ExtractionSession, ScreeningSession, SubmitAck } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export interface ClientOptions {
  baseUrl?: string;
  projectId: string;
  token?: string;
  fetchImpl?: typeof fetch;
}

export class WorkbenchClient {
  private baseUrl: string;
  private projectId: string;
  private token?: string;
  private fetchImpl: typeof fetch;

  constructor(options: ClientOptions) {
    this.baseUrl = (options.baseUrl ?? "").replace(/\/$/, "");
    this.projectId = options.projectId;
    this.token = options.token;
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
  }

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["X-Project-Token"] = this.token;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.parse(text).detail ?? text;
      } catch {
        /* non-JSON error body: surface it verbatim */
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text) as T;
  }

  getScreeningSession(sessionId: string): Promise<ScreeningSession> {
    return this.request("GET", `/sessions/screening/${sessionId}?project_id=${this.projectId}`);
  }

  openScreeningSession(reviewId: string, participantId: string, seed = 0): Promise<ScreeningSession> {
    return this.request("POST", "/sessions/screening/open", {
      project_id: this.projectId,
      review_id: reviewId,
      participant_id: participantId,
      seed,
    });
  }

  submitDecisions(
    sessionId: string,
    decisions: Decision[],
    clientToken: string,
    options: { partial?: boolean; clientElapsed?: number } = {},
  ): Promise<SubmitAck> {
    return this.request("POST", `/sessions/screening/${sessionId}/decisions`, {
      project_id: this.projectId,
      decisions,
      partial: options.partial ?? false,
      client_elapsed: options.clientElapsed ?? null,
      client_token: clientToken,
    });
  }

  getExtractionSession(sessionId: string): Promise<ExtractionSession> {
    return this.request("GET", `/sessions/extraction/${sessionId}?project_id=${this.projectId}`);
  }

  submitExtraction(
    sessionId: string,
    record: Record<string, unknown>,
    clientElapsed?: number,
  ): Promise<{ session_id: string; elapsed_seconds: number }> {
    return this.request("POST", `/sessions/extraction/${sessionId}/submit`, {
      project_id: this.projectId,
      record,
      client_elapsed: clientElapsed ?? null,
    });
  }
}

/** One token per (session, tab); retries reuse it so the server stores once. */
export function newClientToken(sessionId: string): string {
  const noise = Math.random().toString(36).slice(2, 10);
  return `${sessionId}:${Date.now().toString(36)}:${noise}`;
}
