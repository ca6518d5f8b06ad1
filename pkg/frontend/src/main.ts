/** Entry point: wires URL parameters to the session views.
 *
 * ?project=P&screening=SESSION_ID     opens a screening queue
 * ?project=P&extraction=SESSION_ID    opens an extraction form
 * Optional &base=http://host:port and &token=... for the API.
 */

import { WorkbenchClient } from "./api.js";
import { ExtractionForm } from "./extraction.js";
import { ScreeningQueue } from "./screening.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const root = document.getElementById("app");
  if (!root) return;
  const projectId = params.get("project");
  if (!projectId) {
    root.textContent = "Missing ?project=... parameter.";
    return;
  }
  const client = new WorkbenchClient({
    baseUrl: params.get("base") ?? "",
    projectId,
    token: params.get("token") ?? undefined,
  });
  const screeningId = params.get("screening");
  const extractionId = params.get("extraction");
  if (screeningId) {
    await ScreeningQueue.load(root, client, screeningId);
  } else if (extractionId) {
    await ExtractionForm.load(root, client, extractionId);
  } else {
    root.textContent = "Pass ?screening=SESSION_ID or ?extraction=SESSION_ID.";
  }
}

void boot();
