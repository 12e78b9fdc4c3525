/**
 * The chunked download loop: create a job, then poll and fetch each part in
 * order with the same backoff law the reference client uses. Abandoned parts
 * are flagged and the loop moves on; the remainder still downloads.
 */

import { ApiError, PortalApi } from "./api.js";
import { BackoffPolicy, DEFAULT_BACKOFF, delayMs } from "./backoff.js";
import type { QueryDoc } from "./query.js";

export type PartPhase = "pending" | "polling" | "fetching" | "done" | "abandoned";

export interface DownloadState {
  jobId: string;
  parts: PartPhase[];
}

export interface DownloadHooks {
  /** Hand a finished part to the environment (browser: trigger a file download). */
  deliver(filename: string, data: Blob): void | Promise<void>;
  onUpdate?(state: DownloadState): void;
  sleep?(ms: number): Promise<void>;
}

export interface DownloadOptions {
  backoff?: BackoffPolicy;
  maxTries?: number;
}

export interface DownloadOutcome {
  jobId: string;
  completed: number;
  abandoned: number[];
}

const realSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function runDownload(
  api: PortalApi,
  query: QueryDoc,
  hooks: DownloadHooks,
  options: DownloadOptions = {},
): Promise<DownloadOutcome> {
  const backoff = options.backoff ?? DEFAULT_BACKOFF;
  const maxTries = options.maxTries ?? 25;
  const sleep = hooks.sleep ?? realSleep;

  const ticket = await api.createJob(query);
  const state: DownloadState = {
    jobId: ticket.job_id,
    parts: new Array(ticket.part_count).fill("pending"),
  };
  const update = (index: number, phase: PartPhase) => {
    state.parts[index] = phase;
    hooks.onUpdate?.({ jobId: state.jobId, parts: [...state.parts] });
  };
  hooks.onUpdate?.({ jobId: state.jobId, parts: [...state.parts] });

  const abandoned: number[] = [];
  for (let index = 0; index < ticket.part_count; index++) {
    const ok = await downloadPart(api, state.jobId, index, { backoff, maxTries, sleep, update, deliver: hooks.deliver });
    if (ok) {
      update(index, "done");
    } else {
      abandoned.push(index);
      update(index, "abandoned");
    }
  }
  return {
    jobId: state.jobId,
    completed: ticket.part_count - abandoned.length,
    abandoned,
  };
}

interface PartContext {
  backoff: BackoffPolicy;
  maxTries: number;
  sleep: (ms: number) => Promise<void>;
  update: (index: number, phase: PartPhase) => void;
  deliver: DownloadHooks["deliver"];
}

async function downloadPart(
  api: PortalApi,
  jobId: string,
  index: number,
  ctx: PartContext,
): Promise<boolean> {
  let step = 0;
  let negativePolls = 0;
  let fetchFailures = 0;
  ctx.update(index, "polling");
  for (;;) {
    await ctx.sleep(delayMs(ctx.backoff, step));
    let ready: boolean;
    try {
      ready = (await api.partStatus(jobId, index)).ready;
    } catch (error) {
      if (error instanceof ApiError) return false; // gone, failed, or unknown
      throw error;
    }
    if (!ready) {
      negativePolls += 1;
      step += 1;
      if (negativePolls >= ctx.maxTries) return false;
      continue;
    }
    // Positive answer: the backoff restarts from the top.
    step = 0;
    negativePolls = 0;
    ctx.update(index, "fetching");
    try {
      const blob = await api.fetchPart(jobId, index);
      await ctx.deliver(`part-${String(index).padStart(5, "0")}.tar`, blob);
      return true;
    } catch (error) {
      if (error instanceof ApiError && error.code === "part_gone") return false;
      fetchFailures += 1;
      if (fetchFailures >= ctx.maxTries) return false;
      ctx.update(index, "polling"); // re-poll after the dropped transfer
    }
  }
}
