/** Wire types mirroring the workbench HTTP API. */

export type Arm = "expert_only" | "expert_ai";

export interface CriterionAssessment {
  criterion_id: string;
  label: "YES" | "PARTIAL" | "UNCERTAIN" | "NO";
  rationale: string;
}

export interface CandidateCard {
  citation_id: string;
  title: string;
  abstract: string;
  /** present only on expert_ai sessions; the server is the sole score source */
  score?: number;
  assessments?: CriterionAssessment[];
}

export interface ScreeningSession {
  session_id: string;
  review_id: string;
  participant_id: string;
  arm: Arm;
  max_selections: number;
  candidates: CandidateCard[];
  started_at: number;
  submitted: boolean;
}

export interface Decision {
  citation_id: string;
  verdict: "include" | "exclude";
}

export interface SubmitAck {
  session_id: string;
  recall: number;
  selected: number;
  elapsed_seconds: number;
}

export interface FieldSpec {
  name: string;
  kind: "text" | "number" | "list";
}

export interface ExtractionSchema {
  fields?: FieldSpec[];
  arms?: number;
  rows?: number;
  results?: { group_id: string; kind: "text" | "number" | "list" }[];
}

export interface ExtractionSession {
  session_id: string;
  citation_id: string;
  task_kind: "char_extract" | "arm_extract" | "participant_extract" | "result_extract";
  participant_id: string;
  arm: Arm;
  document: string;
  schema: ExtractionSchema;
  submitted: boolean;
  record: Record<string, unknown> | null;
  ai_prefill?: Record<string, unknown> | null;
}

/** Per-field provenance sent alongside the record for downstream analysis. */
export type FieldState = "accepted" | "edited" | "entered";
