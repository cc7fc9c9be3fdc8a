/** Typed client for the review service HTTP API. All mutations go through
 * here; the UI never invents state the server didn't confirm. */

export interface SourceVote {
  source_id: string;
  label: string;
  confidence: number;
}

export interface QueueItem {
  sample_id: string;
  status: "needs_review" | "reviewed" | "auto";
  original_label: string | null;
  refined_label: string;
  reviewer_note: string | null;
  source_votes: SourceVote[];
}

export interface QueuePage {
  items: QueueItem[];
  total: number;
  offset: number;
  limit: number;
}

export interface Decision {
  sample_id: string;
  corrected: string;
  note: string | null;
  timestamp: string;
}

export interface SampleDetail extends QueueItem {
  transcript: string | null;
  decision: Decision | null;
}

export interface Stats {
  total: number;
  auto: number;
  needs_review: number;
  reviewed: number;
  changed_from_original: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (typeof body?.detail === "string") detail = body.detail;
      else if (body?.detail) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

/** Client bound to a base URL ("" = same origin, which is how the built UI
 * runs when served by the review service itself). */
export function makeClient(baseUrl = "") {
  return {
    getQueue(status = "needs_review", offset = 0, limit = 200): Promise<QueuePage> {
      const params = new URLSearchParams({
        status,
        offset: String(offset),
        limit: String(limit),
      });
      return request<QueuePage>(`${baseUrl}/api/queue?${params}`);
    },

    getSample(sampleId: string): Promise<SampleDetail> {
      return request<SampleDetail>(`${baseUrl}/api/sample/${encodeURIComponent(sampleId)}`);
    },

    submitLabel(sampleId: string, label: string, note: string | null): Promise<SampleDetail> {
      return request<SampleDetail>(
        `${baseUrl}/api/sample/${encodeURIComponent(sampleId)}/label`,
        {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify({ label, note: note || null }),
        },
      );
    },

    getStats(): Promise<Stats> {
      return request<Stats>(`${baseUrl}/api/stats`);
    },

    getLabels(): Promise<string[]> {
      return request<string[]>(`${baseUrl}/api/labels`);
    },
  };
}

export type Client = ReturnType<typeof makeClient>;
