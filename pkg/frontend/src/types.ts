// Wire types mirroring the service JSON. All numbers displayed in the
// console come from these payloads verbatim; the client computes nothing.

export interface LoginResponse {
  token: string;
  expires_at: number;
}

export type RequestStatus = "processing" | "processed" | "completed";

export interface SubmitResponse {
  request_id: string;
  status: RequestStatus;
  queue_position: number | null;
}

export interface RequestRecord {
  request_id: string;
  user_id: string;
  kind: string;
  status: RequestStatus;
  created_at: number;
  updated_at: number;
  result_ref: string | null;
  delivery_failed: boolean;
}

export interface ResourceView {
  pair_id: string;
  signal: number;
  idler: number;
  current_rate_hz: number;
  status: "free" | "assigned";
  assigned_to: string | null;
}

export interface HistogramResult {
  channel?: number;
  bin_width_ps: number;
  origin_ps: number;
  counts: number[];
}

export interface CoincidenceResult {
  rate_a_hz: number;
  rate_b_hz: number;
  cc_hz: number;
  acc_hz: number;
  car: number | null;
  peak_delay_ps: number;
}

export interface MeasurementResponse<T> {
  request_id: string;
  pair_id: string;
  function: string;
  result: T;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field?: string;
}
