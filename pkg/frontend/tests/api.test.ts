import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("creates a session with the requested decoder", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse(201, { session_id: "s1", decoder: "cold" }),
    );
    const client = new ApiClient("http://api", fetchFn);
    const session = await client.createSession("cold");
    expect(session.session_id).toBe("s1");
    expect(fetchFn).toHaveBeenCalledWith(
      "http://api/v1/session",
      expect.objectContaining({
        method: "POST",
        body: JSON.stringify({ decoder: "cold" }),
      }),
    );
  });

  it("posts messages to the session endpoint", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse(200, {
        reply: "ok",
        triggered: false,
        entity: null,
        candidates: [],
        type_distribution: {},
        latency_ms: 1,
      }),
    );
    const client = new ApiClient("", fetchFn);
    const res = await client.sendMessage("abc", "hello");
    expect(res.reply).toBe("ok");
    expect(fetchFn).toHaveBeenCalledWith(
      "/v1/session/abc/message",
      expect.objectContaining({ body: JSON.stringify({ text: "hello" }) }),
    );
  });

  it("surfaces server error messages as ApiError", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse(404, { error: "unknown session" }),
    );
    const client = new ApiClient("", fetchFn);
    await expect(client.getHistory("nope")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
      message: "unknown session",
    });
  });

  it("falls back to a status message on non-JSON errors", async () => {
    const fetchFn = vi.fn(async () => new Response("boom", { status: 500 }));
    const client = new ApiClient("", fetchFn);
    await expect(client.health()).rejects.toBeInstanceOf(ApiError);
    await expect(client.health()).rejects.toMatchObject({
      message: "request failed with status 500",
    });
  });

  it("encodes the kb type filter", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(200, { entities: [] }));
    const client = new ApiClient("", fetchFn);
    await client.kbEntities("point of interest");
    expect(fetchFn).toHaveBeenCalledWith(
      "/v1/kb/entities?type=point%20of%20interest",
      undefined,
    );
  });

  it("strips a trailing slash from the base url", async () => {
    const fetchFn = vi.fn(async () =>
      jsonResponse(200, { status: "ok", model: "x" }),
    );
    const client = new ApiClient("http://api/", fetchFn);
    await client.health();
    expect(fetchFn).toHaveBeenCalledWith("http://api/v1/health", undefined);
  });
});
