import type { CandidateCard, ExtractionSession, ScreeningSession } from "../src/types.js";

export function makeCandidates(n: number, withAi: boolean): CandidateCard[] {
  const cards: CandidateCard[] = [];
  for (let i = 0; i < n; i += 1) {
    const card: CandidateCard = {
      citation_id: `c${String(i).padStart(2, "0")}`,
      title: `Candidate study ${i}`,
      abstract: `Abstract text for candidate ${i}.`,
    };
    if (withAi) {
      card.score = Math.round((1 - i * 0.06) * 1000) / 1000;
      card.assessments = [
        { criterion_id: "P1", label: "YES", rationale: `population fits for ${i}` },
        { criterion_id: "I1", label: i % 3 === 0 ? "PARTIAL" : "NO", rationale: "intervention differs" },
        { criterion_id: "O1", label: "UNCERTAIN", rationale: "outcome unclear" },
      ];
    }
    cards.push(card);
  }
  return cards;
}

export function screeningSession(
  arm: "expert_only" | "expert_ai",
  n = 30,
  maxSelections = 10,
): ScreeningSession {
  return {
    session_id: `scr-rev0-p0`,
    review_id: "rev0",
    participant_id: "p0",
    arm,
    max_selections: maxSelections,
    candidates: makeCandidates(n, arm === "expert_ai"),
    started_at: Date.now() / 1000,
    submitted: false,
  };
}

export function extractionSession(
  arm: "expert_only" | "expert_ai",
  taskKind: ExtractionSession["task_kind"] = "char_extract",
  overrides: Partial<ExtractionSession> = {},
): ExtractionSession {
  const base: ExtractionSession = {
    session_id: "ext-c1-task-p0",
    citation_id: "c1",
    task_kind: taskKind,
    participant_id: "p0",
    arm,
    document: "METHODS\nEnrollment: 120 participants.\nDesign: randomized controlled trial.",
    schema: {
      fields: [
        { name: "enrollment", kind: "number" },
        { name: "study_type", kind: "text" },
      ],
    },
    submitted: false,
    record: null,
  };
  if (arm === "expert_ai") {
    base.ai_prefill = { values: { enrollment: 120, study_type: "randomized controlled trial" } };
  }
  return { ...base, ...overrides };
}

export interface MockServerOptions {
  session: ScreeningSession | ExtractionSession;
  failFirstSubmit?: boolean;
}

/** In-memory stand-in for the workbench API, keyed on client tokens the
 * same way the real service is. */
export class MockServer {
  closes = 0;
  submissions = new Map<string, unknown>();
  requests: { method: string; path: string; body?: unknown }[] = [];
  private closedToken: string | null = null;
  private failFirstSubmit: boolean;

  constructor(private options: MockServerOptions) {
    this.failFirstSubmit = options.failFirstSubmit ?? false;
  }

  fetch = async (url: string | URL | Request, init?: RequestInit): Promise<Response> => {
    const href = typeof url === "string" ? url : url instanceof URL ? url.href : url.url;
    const path = href.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, path, body });

    if (method === "GET" && path.includes("/sessions/screening/")) {
      return json(200, this.options.session);
    }
    if (method === "GET" && path.includes("/sessions/extraction/")) {
      return json(200, this.options.session);
    }
    if (method === "POST" && path.includes("/decisions")) {
      const token = body.client_token as string;
      if (this.failFirstSubmit) {
        this.failFirstSubmit = false;
        throw new TypeError("network dropped");
      }
      if (this.closedToken !== null) {
        if (token && token === this.closedToken) {
          return json(200, this.submissions.get(token));
        }
        return json(409, { detail: `SessionClosed: ${body.project_id}` });
      }
      this.closedToken = token;
      this.closes += 1;
      const selected = (body.decisions as { verdict: string }[]).filter(
        (d) => d.verdict === "include",
      ).length;
      const ack = {
        session_id: (this.options.session as ScreeningSession).session_id,
        recall: 0.8,
        selected,
        elapsed_seconds: 120,
      };
      this.submissions.set(token, ack);
      return json(200, ack);
    }
    if (method === "POST" && path.includes("/submit")) {
      this.closes += 1;
      return json(200, { session_id: "ext", elapsed_seconds: 83 });
    }
    return json(404, { detail: `no route for ${method} ${path}` });
  };
}

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
