/**
 * Typed client for the labeling service. All displayed numbers come from
 * these responses; the UI computes nothing model-related itself.
 */

export interface QueryPayload {
  query_id: string;
  x: Record<string, number | string>;
  cf: Record<string, number | string>;
  x_scores: number[];
  cf_scores: number[];
  feature_order: string[];
}

export interface NextResponse {
  done: boolean;
  query: QueryPayload | null;
}

export interface SessionState {
  session_id: string;
  labeled: number;
  pending: number;
  status: "idle" | "running" | "done";
  before_feasibility: number | null;
  after_feasibility: number | null;
}

export interface MetricsReport {
  validity: number;
  cont_proximity: number;
  cat_proximity: number | null;
  constraint_feasibility: number | null;
  causal_edge: number | null;
  im1: number | null;
  im2: number | null;
  n_inputs: number;
  k_per_input: number;
}

export interface MetricsResponse {
  status: string;
  before: MetricsReport | null;
  after: MetricsReport | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Api {
  constructor(
    private session: string = "main",
    private fetchFn: FetchLike = (u, i) => fetch(u, i),
    private base: string = "",
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.base}/session/${this.session}${path}`, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      throw new ApiError(res.status, (body as { error?: string }).error ?? res.statusText);
    }
    return body as T;
  }

  next(): Promise<NextResponse> {
    return this.request<NextResponse>("/next");
  }

  label(queryId: string, label: 0 | 1): Promise<{ ok: boolean; labeled: number }> {
    return this.request("/label", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ query_id: queryId, label }),
    });
  }

  finetune(): Promise<{ status: string }> {
    return this.request("/finetune", { method: "POST" });
  }

  state(): Promise<SessionState> {
    return this.request<SessionState>("/state");
  }

  metrics(): Promise<MetricsResponse> {
    return this.request<MetricsResponse>("/metrics");
  }
}
