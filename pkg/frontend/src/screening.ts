/** Screening queue: candidate cards in server order, include/exclude
 * selection with a hard cap, and retry-safe submission.
 *
 * Expert-only sessions render no AI-derived element of any kind; expert+AI
 * sessions show the server-provided score (two decimals) and per-criterion
 * badges whose rationales open on demand. All scores come from the server;
 * this module does no score arithmetic.
 */

import { ApiError, WorkbenchClient, newClientToken } from "./api.js";
import { LiveTimer } from "./timer.js";
import type { CandidateCard, Decision, ScreeningSession, SubmitAck } from "./types.js";

const BADGE_CLASSES: Record<string, string> = {
  YES: "badge-yes", // green
  PARTIAL: "badge-partial", // yellow-green
  UNCERTAIN: "badge-uncertain", // grey
  NO: "badge-no", // red
};

export type Verdict = "include" | "exclude";

export class ScreeningQueue {
  readonly selections = new Map<string, Verdict>();
  private timer: LiveTimer | null = null;
  private clientToken: string;
  private submitInFlight: Promise<SubmitAck> | null = null;
  private submitted = false;

  constructor(
    private root: HTMLElement,
    private client: WorkbenchClient,
    readonly session: ScreeningSession,
  ) {
    this.clientToken = newClientToken(session.session_id);
  }

  /** Fetch a session and render it; fetch failures render an explicit error
   * state, never an empty silent list. */
  static async load(
    root: HTMLElement,
    client: WorkbenchClient,
    sessionId: string,
  ): Promise<ScreeningQueue | null> {
    let session: ScreeningSession;
    try {
      session = await client.getScreeningSession(sessionId);
    } catch (error) {
      root.replaceChildren(errorState(error));
      return null;
    }
    const queue = new ScreeningQueue(root, client, session);
    queue.render();
    return queue;
  }

  render(): void {
    const session = this.session;
    this.root.replaceChildren();
    const header = el("div", "queue-header");
    header.append(
      el("h2", "", `Review ${session.review_id}`),
      el(
        "p",
        "queue-instructions",
        `Select up to ${session.max_selections} of ${session.candidates.length} candidates.`,
      ),
    );
    const timerElement = el("span", "timer", "0:00");
    header.append(timerElement);
    this.timer = new LiveTimer(timerElement, session.started_at * 1000);
    this.timer.start();
    this.root.append(header);

    const list = el("ol", "candidate-list");
    for (const card of session.candidates) {
      list.append(this.renderCard(card));
    }
    this.root.append(list);

    const footer = el("div", "queue-footer");
    const counter = el("span", "selection-count");
    counter.id = "selection-count";
    footer.append(counter);
    const submit = el("button", "submit-button", "Submit decisions") as HTMLButtonElement;
    submit.addEventListener("click", () => void this.submit());
    footer.append(submit);
    footer.append(el("span", "status-line"));
    this.root.append(footer);
    this.updateCounter();
  }

  private renderCard(card: CandidateCard): HTMLElement {
    const item = el("li", "candidate-card");
    item.dataset.citationId = card.citation_id;

    const title = el("h3", "candidate-title", card.title);
    item.append(title);

    if (this.session.arm === "expert_ai" && typeof card.score === "number") {
      // server-provided score, displayed to two decimals; never recomputed here
      const scoreTag = el("span", "ai-score", card.score.toFixed(2));
      title.append(scoreTag);
      const badges = el("div", "badge-row");
      for (const assessment of card.assessments ?? []) {
        const badge = el("details", `badge ${BADGE_CLASSES[assessment.label] ?? ""}`);
        const summary = el(
          "summary",
          "badge-label",
          `${assessment.criterion_id} ${assessment.label}`,
        );
        badge.append(summary, el("p", "badge-rationale", assessment.rationale));
        badges.append(badge);
      }
      item.append(badges);
    }

    item.append(el("p", "candidate-abstract", card.abstract));

    const controls = el("div", "decision-controls");
    const include = el("button", "include-button", "Include") as HTMLButtonElement;
    const exclude = el("button", "exclude-button", "Exclude") as HTMLButtonElement;
    include.addEventListener("click", () => this.decide(card.citation_id, "include", item));
    exclude.addEventListener("click", () => this.decide(card.citation_id, "exclude", item));
    controls.append(include, exclude);
    item.append(controls);
    return item;
  }

  /** Apply a verdict; an include past the cap is blocked with a message. */
  decide(citationId: string, verdict: Verdict, card?: HTMLElement): boolean {
    if (this.submitted) return false;
    if (verdict === "include" && this.selections.get(citationId) !== "include") {
      if (this.includedCount() >= this.session.max_selections) {
        this.setStatus(
          `Selection cap reached: at most ${this.session.max_selections} studies may be included.`,
        );
        return false;
      }
    }
    this.selections.set(citationId, verdict);
    const target = card ?? this.cardElement(citationId);
    if (target) {
      target.classList.toggle("decided-include", verdict === "include");
      target.classList.toggle("decided-exclude", verdict === "exclude");
    }
    this.updateCounter();
    return true;
  }

  includedCount(): number {
    let count = 0;
    for (const verdict of this.selections.values()) if (verdict === "include") count += 1;
    return count;
  }

  decisions(): Decision[] {
    return this.session.candidates
      .filter((c) => this.selections.has(c.citation_id))
      .map((c) => ({
        citation_id: c.citation_id,
        verdict: this.selections.get(c.citation_id) as Verdict,
      }));
  }

  /** Submit all decisions. Idempotent: concurrent calls share one request,
   * and retries reuse the same client token so the server closes once. */
  async submit(options: { partial?: boolean } = {}): Promise<SubmitAck | null> {
    const partial = options.partial ?? false;
    if (!partial && this.selections.size !== this.session.candidates.length) {
      const missing = this.session.candidates.length - this.selections.size;
      this.setStatus(
        `Decide all candidates before submitting (${missing} undecided), or submit partially.`,
      );
      return null;
    }
    if (this.submitInFlight) return this.submitInFlight;
    const elapsed = this.timer ? this.timer.elapsedSeconds() : undefined;
    this.submitInFlight = this.client.submitDecisions(
      this.session.session_id,
      this.decisions(),
      this.clientToken,
      { partial, clientElapsed: elapsed },
    );
    try {
      const ack = await this.submitInFlight;
      this.submitted = true;
      this.timer?.stop();
      this.setStatus(`Submitted ${ack.selected} inclusions.`);
      return ack;
    } catch (error) {
      if (error instanceof ApiError) {
        this.setStatus(error.detail); // server errors verbatim
      } else {
        this.setStatus(String(error));
      }
      throw error;
    } finally {
      this.submitInFlight = null;
    }
  }

  /** Retry a dropped submission with the same client token. */
  async retrySubmit(options: { partial?: boolean } = {}): Promise<SubmitAck | null> {
    return this.submit(options);
  }

  private cardElement(citationId: string): HTMLElement | null {
    return this.root.querySelector(`[data-citation-id="${citationId}"]`);
  }

  private updateCounter(): void {
    const counter = this.root.querySelector("#selection-count");
    if (counter) {
      counter.textContent = `${this.includedCount()} / ${this.session.max_selections} included`;
    }
  }

  private setStatus(message: string): void {
    const status = this.root.querySelector(".status-line");
    if (status) status.textContent = message;
  }
}

export function renderedOrder(root: HTMLElement): string[] {
  return Array.from(root.querySelectorAll<HTMLElement>(".candidate-card")).map(
    (card) => card.dataset.citationId ?? "",
  );
}

function errorState(error: unknown): HTMLElement {
  const box = el("div", "error-state");
  box.setAttribute("role", "alert");
  const detail = error instanceof ApiError ? error.detail : String(error);
  box.append(el("h2", "", "Could not load the screening session"), el("p", "", detail));
  return box;
}

function el(tag: string, className = "", text = ""): HTMLElement {
  const element = document.createElement(tag);
  if (className) element.className = className;
  if (text) element.textContent = text;
  return element;
}
