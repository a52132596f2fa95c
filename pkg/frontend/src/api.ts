import type {
  ApiErrorBody,
  CoincidenceResult,
  HistogramResult,
  LoginResponse,
  MeasurementResponse,
  RequestRecord,
  ResourceView,
  SubmitResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
    public readonly field?: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

// Thin typed client over the service HTTP API. Every console action maps to
// exactly one call here.
export class ApiClient {
  private token: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let parsed: Partial<ApiErrorBody> = {};
      try {
        parsed = (await response.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; keep defaults
      }
      throw new ApiError(
        response.status,
        parsed.code ?? "http_error",
        parsed.message ?? `HTTP ${response.status}`,
        parsed.field,
      );
    }
    return (await response.json()) as T;
  }

  async login(user: string, secret: string): Promise<LoginResponse> {
    const doc = await this.request<LoginResponse>("POST", "/api/v1/auth/login", { user, secret });
    this.token = doc.token;
    return doc;
  }

  submitPairRequest(): Promise<SubmitResponse> {
    return this.request("POST", "/api/v1/pair-requests");
  }

  getRequest(requestId: string): Promise<RequestRecord> {
    return this.request("GET", `/api/v1/pair-requests/${requestId}`);
  }

  async queuePosition(): Promise<number | null> {
    const doc = await this.request<{ position: number | null }>("GET", "/api/v1/queue/position");
    return doc.position;
  }

  async resources(): Promise<ResourceView[]> {
    const doc = await this.request<{ resources: ResourceView[] }>("GET", "/api/v1/resources");
    return doc.resources;
  }

  counter(
    pairId: string,
    params: { channel?: number; bin_width_ps: number; n_bins: number; duration_s: number },
  ): Promise<MeasurementResponse<HistogramResult>> {
    return this.request("POST", "/api/v1/measurements", {
      pair_id: pairId,
      function: "counter",
      params,
    });
  }

  coincidence(
    pairId: string,
    params: { duration_s: number; window_ps?: number; background_offset_ps?: number },
  ): Promise<MeasurementResponse<CoincidenceResult>> {
    return this.request("POST", "/api/v1/measurements", {
      pair_id: pairId,
      function: "coincidence",
      params,
    });
  }

  release(pairId: string): Promise<{ released: boolean; pair_id: string }> {
    return this.request("POST", `/api/v1/pairs/${pairId}/release`);
  }
}
