import type { Catalog, CreateSessionBody, SessionResponse } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(private readonly base: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch {
      throw new ApiError(0, "unreachable", "cannot reach the recommendation service");
    }
    if (!resp.ok) {
      // the service answers errors as {code, message}
      let code = `http_${resp.status}`;
      let message = resp.statusText || "request failed";
      try {
        const parsed = (await resp.json()) as { code?: string; message?: string };
        if (parsed && parsed.code) {
          code = parsed.code;
          message = parsed.message ?? message;
        }
      } catch {
        // non-JSON error body, keep the status text
      }
      throw new ApiError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }

  getCatalog(): Promise<Catalog> {
    return this.request("GET", "/catalog");
  }

  createSession(body: CreateSessionBody): Promise<SessionResponse> {
    return this.request("POST", "/sessions", body);
  }

  getSession(id: string): Promise<SessionResponse> {
    return this.request("GET", `/sessions/${encodeURIComponent(id)}`);
  }

  critique(id: string, keyphraseId: number): Promise<SessionResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(id)}/critiques`, {
      keyphrase_id: keyphraseId,
    });
  }

  reset(id: string): Promise<SessionResponse> {
    return this.request("POST", `/sessions/${encodeURIComponent(id)}/reset`);
  }
}
