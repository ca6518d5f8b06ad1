import { describe, expect, it } from "vitest";

import { WorkbenchClient } from "../src/api.js";
import { ExtractionForm } from "../src/extraction.js";
import { MockServer, extractionSession } from "./helpers.js";

function mount(): HTMLElement {
  document.body.innerHTML = '<div id="app"></div>';
  return document.getElementById("app") as HTMLElement;
}

async function loadedForm(server: MockServer): Promise<ExtractionForm> {
  const client = new WorkbenchClient({ projectId: "p1", fetchImpl: server.fetch });
  const form = await ExtractionForm.load(mount(), client, "ext-c1-task-p0");
  if (!form) throw new Error("form failed to load");
  return form;
}

function input(name: string): HTMLInputElement {
  const node = document.querySelector(`input[name="${name}"]`);
  if (!node) throw new Error(`no input named ${name}`);
  return node as HTMLInputElement;
}

function type(node: HTMLInputElement, value: string): void {
  node.value = value;
  node.dispatchEvent(new Event("input", { bubbles: true }));
}

describe("extraction form rendering", () => {
  it("prefill values are visually distinguished and editable", async () => {
    const server = new MockServer({ session: extractionSession("expert_ai") });
    await loadedForm(server);
    const enrollment = input("enrollment");
    expect(enrollment.value).toBe("120");
    expect(enrollment.classList.contains("ai-prefilled")).toBe(true);
    expect(enrollment.disabled).toBe(false);
    type(enrollment, "121");
    expect(enrollment.classList.contains("ai-prefilled")).toBe(false);
    expect(enrollment.classList.contains("user-edited")).toBe(true);
  });

  it("expert-only forms render empty fields with no prefill markers", async () => {
    const server = new MockServer({ session: extractionSession("expert_only") });
    await loadedForm(server);
    expect(input("enrollment").value).toBe("");
    expect(document.querySelectorAll(".ai-prefilled")).toHaveLength(0);
    expect(document.body.innerHTML).not.toContain("ai_prefill");
  });

  it("arm-design prefill with two arms renders two arm sub-forms", async () => {
    const session = extractionSession("expert_ai", "arm_extract", {
      schema: {
        arms: 2,
        fields: [
          { name: "label", kind: "text" },
          { name: "arm_type", kind: "text" },
          { name: "description", kind: "text" },
          { name: "intervention_names", kind: "list" },
        ],
      },
      ai_prefill: {
        arms: [
          { label: "Drug arm", arm_type: "EXPERIMENTAL", description: "active",
            intervention_names: ["drug"] },
          { label: "Control arm", arm_type: "PLACEBO_COMPARATOR", description: "sham",
            intervention_names: ["placebo"] },
        ],
      },
    });
    const server = new MockServer({ session });
    await loadedForm(server);
    expect(document.querySelectorAll(".arm-section")).toHaveLength(2);
    expect(input("arm.0.label").value).toBe("Drug arm");
    expect(input("arm.1.arm_type").value).toBe("PLACEBO_COMPARATOR");
  });

  it("participant rows come from the schema's group ids", async () => {
    const session = extractionSession("expert_only", "participant_extract", {
      schema: {
        results: [
          { group_id: "G1", kind: "number" },
          { group_id: "G2", kind: "number" },
        ],
      },
    });
    const server = new MockServer({ session });
    await loadedForm(server);
    expect(input("result.G1")).toBeTruthy();
    expect(input("result.G2")).toBeTruthy();
  });
});

describe("validation", () => {
  it("non-numeric text in a numeric field shows an inline error and blocks submit", async () => {
    const server = new MockServer({ session: extractionSession("expert_only") });
    const form = await loadedForm(server);
    type(input("enrollment"), "abc");
    expect(input("enrollment").classList.contains("invalid")).toBe(true);
    const error = input("enrollment").parentElement?.querySelector(".field-error");
    expect(error?.textContent).toContain("must be a number");
    const result = await form.submit();
    expect(result).toBeNull();
    expect(server.closes).toBe(0); // nothing sent
  });

  it("NOT_REPORTED is always acceptable", async () => {
    const server = new MockServer({ session: extractionSession("expert_only") });
    const form = await loadedForm(server);
    type(input("enrollment"), "NOT_REPORTED");
    type(input("study_type"), "cohort");
    expect(form.validate()).toBe(true);
  });

  it("prefill never auto-submits", async () => {
    const server = new MockServer({ session: extractionSession("expert_ai") });
    await loadedForm(server);
    expect(server.closes).toBe(0);
    expect(server.requests.filter((r) => r.method === "POST")).toHaveLength(0);
  });
});

describe("payload provenance", () => {
  it("accept-all prefill submits a payload equal to the prefill, all accepted", async () => {
    const server = new MockServer({ session: extractionSession("expert_ai") });
    const form = await loadedForm(server);
    const record = (await form.submit())!;
    expect(record.values).toEqual({
      enrollment: 120,
      study_type: "randomized controlled trial",
    });
    expect(record.field_states).toEqual({
      enrollment: "accepted",
      study_type: "accepted",
    });
    expect(server.closes).toBe(1);
  });

  it("diverging on one field stores the edited value with edited state", async () => {
    const server = new MockServer({ session: extractionSession("expert_ai") });
    const form = await loadedForm(server);
    type(input("enrollment"), "121");
    const record = (await form.submit())!;
    expect((record.values as Record<string, unknown>).enrollment).toBe(121);
    expect((record.field_states as Record<string, string>).enrollment).toBe("edited");
    expect((record.field_states as Record<string, string>).study_type).toBe("accepted");
  });

  it("editing back to the prefill value restores accepted state", async () => {
    const server = new MockServer({ session: extractionSession("expert_ai") });
    const form = await loadedForm(server);
    type(input("enrollment"), "121");
    type(input("enrollment"), "120");
    expect(form.fieldStates().enrollment).toBe("accepted");
  });

  it("expert-only entries are marked entered", async () => {
    const server = new MockServer({ session: extractionSession("expert_only") });
    const form = await loadedForm(server);
    type(input("enrollment"), "99");
    type(input("study_type"), "registry study");
    const record = (await form.submit())!;
    expect(record.field_states).toEqual({ enrollment: "entered", study_type: "entered" });
  });

  it("list fields split on semicolons", async () => {
    const session = extractionSession("expert_only", "char_extract", {
      schema: { fields: [{ name: "conditions", kind: "list" }] },
    });
    const server = new MockServer({ session });
    const form = await loadedForm(server);
    type(input("conditions"), "glioma; adults");
    const record = (await form.submit())!;
    expect((record.values as Record<string, unknown>).conditions).toEqual(["glioma", "adults"]);
  });
});
