import { ApiClient, ApiError } from "./api.js";
import { coincidenceSummary, drawHistogram } from "./chart.js";
import { Session, StateError } from "./session.js";
import type { SessionView } from "./session.js";

const POLL_INTERVAL_MS = 1000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function startApp(): void {
  const api = new ApiClient("");
  const session = new Session(api);

  const loginPanel = el<HTMLElement>("login-panel");
  const workPanel = el<HTMLElement>("work-panel");
  const statusChip = el<HTMLElement>("status-chip");
  const queueLine = el<HTMLElement>("queue-line");
  const pairLine = el<HTMLElement>("pair-line");
  const errorLine = el<HTMLElement>("error-line");
  const requestBtn = el<HTMLButtonElement>("request-btn");
  const releaseBtn = el<HTMLButtonElement>("release-btn");
  const counterBtn = el<HTMLButtonElement>("counter-btn");
  const coincBtn = el<HTMLButtonElement>("coinc-btn");
  const canvas = el<HTMLCanvasElement>("histogram-canvas");
  const summaryTable = el<HTMLTableElement>("coinc-table");

  let poller: number | undefined;

  function render(view: SessionView): void {
    loginPanel.hidden = view.phase !== "logged_out";
    workPanel.hidden = view.phase === "logged_out";
    statusChip.textContent = view.requestStatus ?? (view.phase === "idle" ? "no request" : view.phase);
    statusChip.dataset.status = view.requestStatus ?? "none";
    queueLine.textContent =
      view.queuePosition === null ? "" : `queue position: ${view.queuePosition}`;
    pairLine.textContent = view.pair
      ? `holding ${view.pair.pairId} (Ch${view.pair.signal}/Ch${view.pair.idler}, ` +
        `${Math.round(view.pair.rateHz)} pairs/s)`
      : "";
    errorLine.textContent = view.lastError ?? "";
    requestBtn.disabled = view.phase !== "idle";
    releaseBtn.disabled = view.phase !== "holding";
    counterBtn.disabled = view.phase !== "holding";
    coincBtn.disabled = view.phase !== "holding";

    const shouldPoll = view.phase === "waiting";
    if (shouldPoll && poller === undefined) {
      poller = window.setInterval(() => void session.pollOnce().catch(() => {}), POLL_INTERVAL_MS);
    } else if (!shouldPoll && poller !== undefined) {
      window.clearInterval(poller);
      poller = undefined;
    }
  }

  session.onChange(render);

  function reportError(err: unknown): void {
    if (err instanceof StateError || err instanceof ApiError) {
      errorLine.textContent = err.message;
    } else if (err instanceof Error) {
      errorLine.textContent = err.message;
    }
  }

  el<HTMLFormElement>("login-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const user = el<HTMLInputElement>("login-user").value;
    const secret = el<HTMLInputElement>("login-secret").value;
    void session.login(user, secret).catch(reportError);
  });

  requestBtn.addEventListener("click", () => {
    void session.requestPair().catch(reportError);
  });

  releaseBtn.addEventListener("click", () => {
    void session.release().catch(reportError);
  });

  counterBtn.addEventListener("click", () => {
    const binWidth = Number(el<HTMLInputElement>("bin-width").value) || 1_000_000;
    const nBins = Number(el<HTMLInputElement>("n-bins").value) || 100;
    const duration = Number(el<HTMLInputElement>("duration").value) || 1;
    void session
      .runCounter({ bin_width_ps: binWidth, n_bins: nBins, duration_s: duration })
      .then((hist) => {
        const ctx = canvas.getContext("2d");
        if (ctx) drawHistogram(ctx, hist, canvas.width, canvas.height);
      })
      .catch(reportError);
  });

  coincBtn.addEventListener("click", () => {
    const duration = Number(el<HTMLInputElement>("duration").value) || 1;
    void session
      .runCoincidence({ duration_s: duration })
      .then((result) => {
        summaryTable.innerHTML = "";
        for (const [label, value] of coincidenceSummary(result)) {
          const row = summaryTable.insertRow();
          row.insertCell().textContent = label;
          row.insertCell().textContent = value;
        }
      })
      .catch(reportError);
  });

  render(session.state);
}
