/** Typed client for the chat service REST API. */

export type Decoder = "greedy" | "beam" | "hopskip" | "cold";

export interface HealthResponse {
  status: string;
  model: string;
}

export interface SessionResponse {
  session_id: string;
  decoder: Decoder;
}

export interface EntityRef {
  id: number;
  name: string;
  type: string;
}

export interface Candidate {
  id: number;
  name: string;
  score: number;
}

export interface MessageResponse {
  reply: string;
  triggered: boolean;
  entity: EntityRef | null;
  candidates: Candidate[];
  type_distribution: Record<string, number>;
  latency_ms: number;
}

export interface TranscriptTurn {
  speaker: "user" | "agent";
  text: string;
}

export interface HistoryResponse {
  turns: TranscriptTurn[];
}

export interface KbEntity {
  id: number;
  name: string;
  type: string;
  attributes: Record<string, string>;
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
    this.name = "ApiError";
  }
}

type FetchFn = typeof fetch;

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchFn;

  constructor(baseUrl = "", fetchFn: FetchFn = fetch) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const message =
        typeof body === "object" && body !== null && "error" in body
          ? String((body as { error: unknown }).error)
          : `request failed with status ${res.status}`;
      throw new ApiError(res.status, message);
    }
    return body as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("/v1/health");
  }

  createSession(decoder: Decoder): Promise<SessionResponse> {
    return this.request("/v1/session", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ decoder }),
    });
  }

  sendMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return this.request(`/v1/session/${sessionId}/message`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  getHistory(sessionId: string): Promise<HistoryResponse> {
    return this.request(`/v1/session/${sessionId}/history`);
  }

  kbEntities(type?: string): Promise<{ entities: KbEntity[] }> {
    const query = type ? `?type=${encodeURIComponent(type)}` : "";
    return this.request(`/v1/kb/entities${query}`);
  }
}
