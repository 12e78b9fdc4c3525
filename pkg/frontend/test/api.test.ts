import { describe, expect, it } from "vitest";

import { ApiError, PortalApi } from "../src/api.js";

function jsonResponse(status: number, doc: unknown): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("PortalApi", () => {
  it("attaches basic auth and JSON bodies", async () => {
    const seen: { url?: string; init?: RequestInit } = {};
    const api = new PortalApi(
      () => ({ username: "alice", password: "wonder" }),
      "https://portal.test",
      async (url, init) => {
        seen.url = url;
        seen.init = init;
        return jsonResponse(200, { file_count: 3, part_count: 1, total_bytes: 9 });
      },
    );
    const summary = await api.check({ dataset_class: "eagli" });
    expect(summary.file_count).toBe(3);
    expect(seen.url).toBe("https://portal.test/api/v1/check");
    const headers = seen.init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBe("Basic " + btoa("alice:wonder"));
    expect(headers["Content-Type"]).toBe("application/json");
    expect(JSON.parse(seen.init?.body as string)).toEqual({ dataset_class: "eagli" });
  });

  it("maps error bodies onto ApiError", async () => {
    const api = new PortalApi(
      () => null,
      "",
      async () => jsonResponse(401, { code: "missing_credentials", message: "who are you" }),
    );
    const failure = await api.check({ dataset_class: "eagli" }).catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.status).toBe(401);
    expect(failure.code).toBe("missing_credentials");
  });

  it("tolerates non-JSON error bodies", async () => {
    const api = new PortalApi(
      () => null,
      "",
      async () => new Response("<html>bad gateway</html>", { status: 502 }),
    );
    const failure = await api.health().catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.code).toBe("unknown");
  });
});
