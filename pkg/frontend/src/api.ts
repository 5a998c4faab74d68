/** Thin fetch wrappers for the review service; no state, no retries. */

import type {
  FinalizeSummary,
  QueueFilter,
  ScanListPage,
  Verdict,
  VerdictValue,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface VerdictRequest {
  scan_id: string;
  verdict: VerdictValue;
  note?: string;
  reviewer?: string;
}

export interface ReviewApi {
  fetchScans(page: number, pageSize: number, filter: QueueFilter): Promise<ScanListPage>;
  submitVerdict(body: VerdictRequest): Promise<Verdict>;
  finalize(): Promise<FinalizeSummary>;
}

type Fetch = typeof fetch;

async function errorFrom(resp: Response): Promise<ApiError> {
  let message = `HTTP ${resp.status}`;
  try {
    const body = (await resp.json()) as { error?: unknown };
    if (typeof body.error === "string" && body.error) {
      message = body.error;
    }
  } catch {
    // non-JSON error body; the status line will have to do
  }
  return new ApiError(resp.status, message);
}

export function httpApi(base = "", fetchImpl: Fetch = fetch): ReviewApi {
  async function getJson<T>(path: string): Promise<T> {
    const resp = await fetchImpl(base + path);
    if (!resp.ok) {
      throw await errorFrom(resp);
    }
    return (await resp.json()) as T;
  }

  async function postJson<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetchImpl(base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      throw await errorFrom(resp);
    }
    return (await resp.json()) as T;
  }

  return {
    fetchScans(page, pageSize, filter) {
      const query = new URLSearchParams({
        page: String(page),
        page_size: String(pageSize),
        filter,
      });
      return getJson<ScanListPage>(`/api/scans?${query.toString()}`);
    },

    async submitVerdict(body) {
      const out = await postJson<{ recorded: Verdict }>("/api/verdicts", body);
      return out.recorded;
    },

    finalize() {
      return postJson<FinalizeSummary>("/api/finalize", {});
    },
  };
}
