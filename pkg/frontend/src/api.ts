/** Thin typed client for the engine API. The UI never mutates state except
 * through these endpoints. */

import type {
  EditCycleResult,
  EditOp,
  RevisionSummary,
  StoryListEntry,
  StoryPayload,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public detail?: unknown,
  ) {
    super(message);
    this.name = "ApiError";
  }

  /** Server-side failures worth a retry, as opposed to bad requests. */
  get retryable(): boolean {
    return this.status >= 500 || this.status === 0;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface EditRequestBody {
  text?: string;
  ops?: EditOp[];
  note?: string;
  mode?: string;
  seed?: number;
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, "network_error", String(err));
    }
    if (!resp.ok) {
      let code = `http_${resp.status}`;
      let message = resp.statusText;
      let detail: unknown;
      try {
        const body = (await resp.json()) as { error?: { code?: string; message?: string } };
        if (body.error) {
          code = body.error.code ?? code;
          message = body.error.message ?? message;
          detail = body.error;
        }
      } catch {
        // non-JSON error body; keep the HTTP status text
      }
      throw new ApiError(resp.status, code, message, detail);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown, ifMatch?: string | null): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (ifMatch) headers["If-Match"] = ifMatch;
    return this.request<T>(path, { method: "POST", headers, body: JSON.stringify(body) });
  }

  listStories(): Promise<{ stories: StoryListEntry[] }> {
    return this.request("/stories");
  }

  createStory(prompt: string, nPages: number, seed = 0): Promise<{ story_id: string; revision: string }> {
    return this.post("/stories", { prompt, n_pages: nPages, seed });
  }

  getStory(storyId: string): Promise<StoryPayload> {
    return this.request(`/stories/${storyId}`);
  }

  postEdit(
    storyId: string,
    body: EditRequestBody,
    ifMatch?: string | null,
  ): Promise<{ result: EditCycleResult; head_revision: string }> {
    return this.post(`/stories/${storyId}/edits`, body, ifMatch);
  }

  revert(
    storyId: string,
    revision: string,
    ifMatch?: string | null,
  ): Promise<{ head_revision: string; reverted_to: string }> {
    return this.post(`/stories/${storyId}/revert`, { revision }, ifMatch);
  }

  history(storyId: string): Promise<{ revisions: RevisionSummary[] }> {
    return this.request(`/stories/${storyId}/history`);
  }

  metrics(storyId: string): Promise<Record<string, unknown>> {
    return this.request(`/stories/${storyId}/metrics`);
  }

  acceptFinding(
    storyId: string,
    findingId: string,
    seed = 0,
  ): Promise<{ result: EditCycleResult; head_revision: string }> {
    return this.post(`/stories/${storyId}/critic/${findingId}/accept`, { seed });
  }

  assetUrl(storyId: string, pageId: string, kind: string): string {
    return `${this.baseUrl}/stories/${storyId}/pages/${pageId}/assets/${kind}`;
  }

  /** Fetch asset bytes plus the server's content hash header. */
  async fetchAsset(
    storyId: string,
    pageId: string,
    kind: string,
  ): Promise<{ bytes: ArrayBuffer; hash: string }> {
    const resp = await this.fetchImpl(this.assetUrl(storyId, pageId, kind));
    if (!resp.ok) {
      throw new ApiError(resp.status, `http_${resp.status}`, `asset ${pageId}/${kind} unavailable`);
    }
    return {
      bytes: await resp.arrayBuffer(),
      hash: resp.headers.get("X-Content-Hash") ?? "",
    };
  }
}
