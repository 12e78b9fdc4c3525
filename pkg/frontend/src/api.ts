/** Thin typed client over the gateway's /api/v1 endpoints with Basic auth. */

import type { QueryDoc } from "./query.js";

export interface Credentials {
  username: string;
  password: string;
}

export interface QuerySummary {
  file_count: number;
  part_count: number;
  total_bytes: number;
}

export interface JobTicket {
  job_id: string;
  part_count: number;
}

export interface PartStatus {
  ready: boolean;
  state: string;
}

export interface PrecompiledEntry {
  id: string;
  name: string;
  file_count: number;
  bytes: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class PortalApi {
  constructor(
    private readonly credentials: () => Credentials | null,
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    const creds = this.credentials();
    if (creds) {
      headers["Authorization"] = "Basic " + btoa(`${creds.username}:${creds.password}`);
    }
    if (json) headers["Content-Type"] = "application/json";
    return headers;
  }

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = "unknown";
      let message = `HTTP ${response.status}`;
      try {
        const doc = await response.json();
        code = doc.code ?? code;
        message = doc.message ?? message;
      } catch {
        // non-JSON error body; keep the defaults
      }
      throw new ApiError(response.status, code, message);
    }
    return response;
  }

  async health(): Promise<boolean> {
    const response = await this.request("GET", "/health");
    return (await response.json()).status === "ok";
  }

  async check(query: QueryDoc): Promise<QuerySummary> {
    return (await this.request("POST", "/api/v1/check", query)).json();
  }

  async sample(query: QueryDoc): Promise<ArrayBuffer> {
    return (await this.request("POST", "/api/v1/sample", query)).arrayBuffer();
  }

  async createJob(query: QueryDoc): Promise<JobTicket> {
    return (await this.request("POST", "/api/v1/jobs", query)).json();
  }

  async partStatus(jobId: string, index: number): Promise<PartStatus> {
    return (await this.request("GET", `/api/v1/jobs/${jobId}/parts/${index}/status`)).json();
  }

  async fetchPart(jobId: string, index: number): Promise<Blob> {
    return (await this.request("GET", `/api/v1/jobs/${jobId}/parts/${index}`)).blob();
  }

  async listPrecompiled(): Promise<PrecompiledEntry[]> {
    return (await this.request("GET", "/api/v1/precompiled")).json();
  }

  async fetchPrecompiled(id: string): Promise<Blob> {
    return (await this.request("GET", `/api/v1/precompiled/${id}`)).blob();
  }
}
