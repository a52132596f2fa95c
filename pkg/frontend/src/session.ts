import { ApiClient, ApiError } from "./api.js";
import type { CoincidenceResult, HistogramResult, RequestStatus, ResourceView } from "./types.js";

export type Phase = "logged_out" | "idle" | "waiting" | "holding" | "measuring";

export interface HeldPair {
  pairId: string;
  signal: number;
  idler: number;
  rateHz: number;
}

export interface SessionView {
  phase: Phase;
  user: string | null;
  requestId: string | null;
  requestStatus: RequestStatus | null;
  queuePosition: number | null;
  pair: HeldPair | null;
  lastError: string | null;
}

export class StateError extends Error {}

type Listener = (view: SessionView) => void;

// Client-side mirror of the request lifecycle. The machine makes two-pair
// and measure-without-pair states unrepresentable: requesting is only legal
// from idle, measuring only from holding.
export class Session {
  private view: SessionView = {
    phase: "logged_out",
    user: null,
    requestId: null,
    requestStatus: null,
    queuePosition: null,
    pair: null,
    lastError: null,
  };
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  get state(): SessionView {
    return { ...this.view };
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private update(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  private fail(err: unknown): never {
    if (err instanceof ApiError && err.status === 401) {
      // expired or invalid token: back to login, keep the message visible
      this.update({
        phase: "logged_out",
        user: null,
        requestId: null,
        requestStatus: null,
        queuePosition: null,
        pair: null,
        lastError: err.message,
      });
    } else {
      this.update({ lastError: err instanceof Error ? err.message : String(err) });
    }
    throw err;
  }

  async login(user: string, secret: string): Promise<void> {
    try {
      await this.api.login(user, secret);
      this.update({ phase: "idle", user, lastError: null });
    } catch (err) {
      this.fail(err);
    }
  }

  async requestPair(): Promise<void> {
    if (this.view.phase !== "idle") {
      throw new StateError(`cannot request a pair while ${this.view.phase}`);
    }
    try {
      const ack = await this.api.submitPairRequest();
      this.update({
        phase: "waiting",
        requestId: ack.request_id,
        requestStatus: ack.status,
        queuePosition: ack.queue_position,
        lastError: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /** One polling step; the app drives this on a 1 s interval while waiting. */
  async pollOnce(): Promise<void> {
    if (this.view.phase !== "waiting" || this.view.requestId === null) return;
    try {
      const record = await this.api.getRequest(this.view.requestId);
      if (record.result_ref && record.result_ref.startsWith("pair:")) {
        const pairId = record.result_ref.slice("pair:".length);
        const resources = await this.api.resources();
        const mine = resources.find((r) => r.pair_id === pairId);
        this.update({
          phase: "holding",
          requestStatus: record.status,
          queuePosition: null,
          pair: toHeldPair(pairId, mine),
        });
        return;
      }
      const position = await this.api.queuePosition();
      this.update({ requestStatus: record.status, queuePosition: position });
    } catch (err) {
      this.fail(err);
    }
  }

  async runCounter(params: {
    channel?: number;
    bin_width_ps: number;
    n_bins: number;
    duration_s: number;
  }): Promise<HistogramResult> {
    const pair = this.requireHeldPair();
    this.update({ phase: "measuring" });
    try {
      const doc = await this.api.counter(pair.pairId, params);
      this.update({ phase: "holding", lastError: null });
      return doc.result;
    } catch (err) {
      this.update({ phase: "holding" });
      this.fail(err);
    }
  }

  async runCoincidence(params: {
    duration_s: number;
    window_ps?: number;
    background_offset_ps?: number;
  }): Promise<CoincidenceResult> {
    const pair = this.requireHeldPair();
    this.update({ phase: "measuring" });
    try {
      const doc = await this.api.coincidence(pair.pairId, params);
      // the coincidence rate is the pair's refreshed R_w; mirror it
      this.update({
        phase: "holding",
        pair: { ...pair, rateHz: doc.result.cc_hz },
        lastError: null,
      });
      return doc.result;
    } catch (err) {
      this.update({ phase: "holding" });
      this.fail(err);
    }
  }

  async release(): Promise<void> {
    const pair = this.requireHeldPair();
    try {
      await this.api.release(pair.pairId);
      this.update({
        phase: "idle",
        requestId: null,
        requestStatus: null,
        queuePosition: null,
        pair: null,
        lastError: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  private requireHeldPair(): HeldPair {
    if (this.view.phase !== "holding" || this.view.pair === null) {
      throw new StateError(`no held pair in phase ${this.view.phase}`);
    }
    return this.view.pair;
  }
}

function toHeldPair(pairId: string, resource: ResourceView | undefined): HeldPair {
  return {
    pairId,
    signal: resource?.signal ?? 0,
    idler: resource?.idler ?? 0,
    rateHz: resource?.current_rate_hz ?? 0,
  };
}
