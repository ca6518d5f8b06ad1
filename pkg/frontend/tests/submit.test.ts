import { describe, expect, it } from "vitest";

import { WorkbenchClient } from "../src/api.js";
import { ScreeningQueue } from "../src/screening.js";
import { MockServer, screeningSession } from "./helpers.js";

function mount(): HTMLElement {
  document.body.innerHTML = '<div id="app"></div>';
  return document.getElementById("app") as HTMLElement;
}

async function loadedQueue(server: MockServer): Promise<ScreeningQueue> {
  const client = new WorkbenchClient({ projectId: "p1", fetchImpl: server.fetch });
  const queue = await ScreeningQueue.load(mount(), client, "scr-rev0-p0");
  if (!queue) throw new Error("queue failed to load");
  return queue;
}

function decideAll(queue: ScreeningQueue, includes = 5): void {
  queue.session.candidates.forEach((candidate, index) => {
    queue.decide(candidate.citation_id, index < includes ? "include" : "exclude");
  });
}

describe("submission", () => {
  it("double-click submit closes the session exactly once server-side", async () => {
    const server = new MockServer({ session: screeningSession("expert_only") });
    const queue = await loadedQueue(server);
    decideAll(queue);
    const [first, second] = await Promise.all([queue.submit(), queue.submit()]);
    expect(server.closes).toBe(1);
    expect(first).toEqual(second);
  });

  it("sequential re-submit after success reuses the stored ack", async () => {
    const server = new MockServer({ session: screeningSession("expert_only") });
    const queue = await loadedQueue(server);
    decideAll(queue);
    const first = await queue.submit();
    const again = await queue.submit();
    expect(server.closes).toBe(1);
    expect(again).toEqual(first);
  });

  it("network drop mid-submit retries with the same token: one stored submission", async () => {
    const server = new MockServer({
      session: screeningSession("expert_only"),
      failFirstSubmit: true,
    });
    const queue = await loadedQueue(server);
    decideAll(queue);
    await expect(queue.submit()).rejects.toThrow("network dropped");
    const ack = await queue.retrySubmit();
    expect(ack?.selected).toBe(5);
    expect(server.closes).toBe(1);
    expect(server.submissions.size).toBe(1);
    const tokens = server.requests
      .filter((r) => r.path.includes("/decisions"))
      .map((r) => (r.body as { client_token: string }).client_token);
    expect(new Set(tokens).size).toBe(1); // same token on every attempt
  });

  it("partial submit without the flag fails client-side with no request sent", async () => {
    const server = new MockServer({ session: screeningSession("expert_only") });
    const queue = await loadedQueue(server);
    queue.decide("c00", "include");
    const result = await queue.submit();
    expect(result).toBeNull();
    expect(server.requests.filter((r) => r.path.includes("/decisions"))).toHaveLength(0);
    expect(
      document.querySelector(".status-line")?.textContent,
    ).toContain("Decide all candidates");
  });

  it("explicit partial submit goes through", async () => {
    const server = new MockServer({ session: screeningSession("expert_only") });
    const queue = await loadedQueue(server);
    queue.decide("c00", "include");
    const ack = await queue.submit({ partial: true });
    expect(ack?.selected).toBe(1);
    const body = server.requests.find((r) => r.path.includes("/decisions"))?.body as {
      partial: boolean;
    };
    expect(body.partial).toBe(true);
  });

  it("surfaces server errors verbatim in the status line", async () => {
    const server = new MockServer({ session: screeningSession("expert_only") });
    const queue = await loadedQueue(server);
    decideAll(queue);
    await queue.submit();
    // a different client (no shared token) hitting the closed session
    const stranger = new WorkbenchClient({ projectId: "p1", fetchImpl: server.fetch });
    const other = new ScreeningQueue(mount(), stranger, screeningSession("expert_only"));
    other.render();
    decideAll(other);
    await expect(other.submit()).rejects.toThrow();
    expect(document.querySelector(".status-line")?.textContent).toContain("SessionClosed");
  });

  it("client elapsed time is sent as advisory only", async () => {
    const server = new MockServer({ session: screeningSession("expert_only") });
    const queue = await loadedQueue(server);
    decideAll(queue);
    await queue.submit();
    const body = server.requests.find((r) => r.path.includes("/decisions"))?.body as {
      client_elapsed: number | null;
    };
    expect(typeof body.client_elapsed).toBe("number");
  });
});
