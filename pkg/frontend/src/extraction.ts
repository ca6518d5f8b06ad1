/** Extraction form: task-specific fields, AI prefill visually distinguished
 * from user input, per-field accept/edit provenance in the payload, and
 * client-side schema validation before anything is sent. Prefill never
 * auto-submits. */

import { ApiError, WorkbenchClient } from "./api.js";
import { LiveTimer } from "./timer.js";
import type { ExtractionSession, FieldState } from "./types.js";

interface FieldEntry {
  name: string;
  kind: "text" | "number" | "list";
  input: HTMLInputElement;
  prefill: string | null;
  state: FieldState;
  group?: string; // participant rows
  row?: number; // arm / result rows
}

export class ExtractionForm {
  private fields: FieldEntry[] = [];
  private timer: LiveTimer | null = null;
  private submitted = false;

  constructor(
    private root: HTMLElement,
    private client: WorkbenchClient,
    readonly session: ExtractionSession,
  ) {}

  static async load(
    root: HTMLElement,
    client: WorkbenchClient,
    sessionId: string,
  ): Promise<ExtractionForm | null> {
    let session: ExtractionSession;
    try {
      session = await client.getExtractionSession(sessionId);
    } catch (error) {
      const box = document.createElement("div");
      box.className = "error-state";
      box.setAttribute("role", "alert");
      box.textContent =
        error instanceof ApiError ? error.detail : `Could not load the session: ${error}`;
      root.replaceChildren(box);
      return null;
    }
    const form = new ExtractionForm(root, client, session);
    form.render();
    return form;
  }

  render(): void {
    const session = this.session;
    this.root.replaceChildren();
    this.fields = [];

    const header = document.createElement("div");
    header.className = "form-header";
    const heading = document.createElement("h2");
    heading.textContent = `${session.task_kind} for ${session.citation_id}`;
    const timerElement = document.createElement("span");
    timerElement.className = "timer";
    header.append(heading, timerElement);
    this.root.append(header);
    this.timer = new LiveTimer(timerElement);
    this.timer.start();

    const doc = document.createElement("details");
    doc.className = "document-panel";
    const docSummary = document.createElement("summary");
    docSummary.textContent = "Study document";
    const docBody = document.createElement("pre");
    docBody.textContent = session.document;
    doc.append(docSummary, docBody);
    this.root.append(doc);

    const form = document.createElement("form");
    form.className = "extraction-form";
    form.addEventListener("submit", (event) => event.preventDefault());
    this.buildFields(form);
    this.root.append(form);

    const footer = document.createElement("div");
    footer.className = "form-footer";
    const submit = document.createElement("button");
    submit.className = "submit-button";
    submit.textContent = "Submit extraction";
    submit.addEventListener("click", () => void this.submit());
    const status = document.createElement("span");
    status.className = "status-line";
    footer.append(submit, status);
    this.root.append(footer);
  }

  private prefillValue(path: (string | number)[]): unknown {
    let node: unknown = this.session.ai_prefill ?? null;
    for (const key of path) {
      if (node === null || typeof node !== "object") return null;
      node = (node as Record<string | number, unknown>)[key];
      if (node === undefined) return null;
    }
    return node;
  }

  private addField(
    container: HTMLElement,
    label: string,
    name: string,
    kind: "text" | "number" | "list",
    prefill: unknown,
    extra: Partial<FieldEntry> = {},
  ): void {
    const row = document.createElement("label");
    row.className = "field-row";
    const caption = document.createElement("span");
    caption.className = "field-label";
    caption.textContent = label;
    const input = document.createElement("input");
    input.type = "text";
    input.name = name;
    const message = document.createElement("span");
    message.className = "field-error";

    let prefillText: string | null = null;
    if (prefill !== null && prefill !== undefined) {
      prefillText = Array.isArray(prefill) ? prefill.join("; ") : String(prefill);
      input.value = prefillText;
      input.classList.add("ai-prefilled"); // visually distinct until edited
    }
    const entry: FieldEntry = {
      name,
      kind,
      input,
      prefill: prefillText,
      state: prefillText !== null ? "accepted" : "entered",
      ...extra,
    };
    input.addEventListener("input", () => {
      if (entry.prefill !== null) {
        entry.state = input.value === entry.prefill ? "accepted" : "edited";
        input.classList.toggle("ai-prefilled", entry.state === "accepted");
        input.classList.toggle("user-edited", entry.state === "edited");
      }
      this.validateField(entry, message);
    });
    this.fields.push(entry);
    row.append(caption, input, message);
    container.append(row);
  }

  private buildFields(form: HTMLElement): void {
    const schema = this.session.schema;
    const task = this.session.task_kind;
    if (task === "char_extract") {
      for (const spec of schema.fields ?? []) {
        this.addField(form, `${spec.name} (${spec.kind})`, spec.name, spec.kind, this.prefillValue(["values", spec.name]));
      }
    } else if (task === "arm_extract") {
      const count = Math.max(
        schema.arms ?? 0,
        Array.isArray(this.session.ai_prefill?.arms)
          ? (this.session.ai_prefill?.arms as unknown[]).length
          : 0,
        1,
      );
      for (let index = 0; index < count; index += 1) {
        const section = document.createElement("fieldset");
        section.className = "arm-section";
        const legend = document.createElement("legend");
        legend.textContent = `Arm ${index + 1}`;
        section.append(legend);
        for (const spec of schema.fields ?? []) {
          this.addField(
            section,
            spec.name,
            `arm.${index}.${spec.name}`,
            spec.kind,
            this.prefillValue(["arms", index, spec.name]),
            { row: index },
          );
        }
        form.append(section);
      }
      return;
    } else if (task === "participant_extract") {
      (schema.results ?? []).forEach((row, index) => {
        this.addField(
          form,
          `${row.group_id} value (${row.kind})`,
          `result.${row.group_id}`,
          row.kind,
          this.prefillValue(["results", index, "value"]),
          { group: row.group_id },
        );
      });
    } else {
      const rows = Math.max(schema.rows ?? 0, 1);
      for (let index = 0; index < rows; index += 1) {
        const section = document.createElement("fieldset");
        section.className = "result-section";
        this.addField(section, "title", `result.${index}.title`, "text", this.prefillValue(["results", index, "title"]), { row: index });
        this.addField(section, "value", `result.${index}.value`, "number", this.prefillValue(["results", index, "value"]), { row: index });
        form.append(section);
      }
      return;
    }
  }

  private validateField(entry: FieldEntry, message?: Element | null): boolean {
    const target =
      message ?? entry.input.parentElement?.querySelector(".field-error") ?? null;
    const raw = entry.input.value.trim();
    let problem = "";
    if (entry.kind === "number" && raw !== "" && raw !== "NOT_REPORTED") {
      const normalized = raw.replace(/,/g, "").replace(/−/g, "-");
      if (!/^-?\d+(\.\d+)?$/.test(normalized)) {
        problem = "must be a number (or NOT_REPORTED)";
      }
    }
    if (target) target.textContent = problem;
    entry.input.classList.toggle("invalid", problem !== "");
    return problem === "";
  }

  /** Validate every field; invalid payloads never leave the browser. */
  validate(): boolean {
    let valid = true;
    for (const entry of this.fields) {
      if (!this.validateField(entry)) valid = false;
    }
    return valid;
  }

  private parsedValue(entry: FieldEntry): unknown {
    const raw = entry.input.value.trim();
    if (raw === "" || raw === "NOT_REPORTED") return "NOT_REPORTED";
    if (entry.kind === "number") {
      return Number(raw.replace(/,/g, "").replace(/−/g, "-"));
    }
    if (entry.kind === "list") {
      return raw.split(";").map((part) => part.trim()).filter((part) => part !== "");
    }
    return raw;
  }

  /** The record payload plus per-field accepted/edited/entered provenance. */
  buildRecord(): Record<string, unknown> {
    const task = this.session.task_kind;
    const states: Record<string, FieldState> = {};
    for (const entry of this.fields) states[entry.name] = entry.state;

    if (task === "char_extract") {
      const values: Record<string, unknown> = {};
      for (const entry of this.fields) values[entry.name] = this.parsedValue(entry);
      return { values, field_states: states };
    }
    if (task === "arm_extract") {
      const arms: Record<string, unknown>[] = [];
      for (const entry of this.fields) {
        const index = entry.row ?? 0;
        arms[index] = arms[index] ?? {};
        const key = entry.name.split(".").pop() as string;
        arms[index][key] = this.parsedValue(entry);
      }
      return { arms: arms.filter(Boolean), field_states: states };
    }
    if (task === "participant_extract") {
      return {
        results: this.fields.map((entry) => ({
          group_id: entry.group,
          value: this.parsedValue(entry),
        })),
        field_states: states,
      };
    }
    const byRow = new Map<number, Record<string, unknown>>();
    for (const entry of this.fields) {
      const index = entry.row ?? 0;
      const row = byRow.get(index) ?? {};
      row[entry.name.split(".").pop() as string] = this.parsedValue(entry);
      byRow.set(index, row);
    }
    return { results: Array.from(byRow.values()), field_states: states };
  }

  async submit(): Promise<Record<string, unknown> | null> {
    if (this.submitted) {
      this.setStatus("Already submitted.");
      return null;
    }
    if (!this.validate()) {
      this.setStatus("Fix the highlighted fields before submitting.");
      return null;
    }
    const record = this.buildRecord();
    try {
      const ack = await this.client.submitExtraction(
        this.session.session_id,
        record,
        this.timer?.elapsedSeconds(),
      );
      this.submitted = true;
      this.timer?.stop();
      this.setStatus(`Stored (${ack.elapsed_seconds.toFixed(0)}s).`);
      return record;
    } catch (error) {
      this.setStatus(error instanceof ApiError ? error.detail : String(error));
      throw error;
    }
  }

  fieldStates(): Record<string, FieldState> {
    const states: Record<string, FieldState> = {};
    for (const entry of this.fields) states[entry.name] = entry.state;
    return states;
  }

  private setStatus(message: string): void {
    const status = this.root.querySelector(".status-line");
    if (status) status.textContent = message;
  }
}
