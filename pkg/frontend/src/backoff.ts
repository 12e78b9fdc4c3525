/** Polling backoff: delay(n) = min(initial * factor^n, cap), in whole ms. */

export interface BackoffPolicy {
  initialMs: number;
  factor: number;
  capMs: number;
}

export const DEFAULT_BACKOFF: BackoffPolicy = { initialMs: 200, factor: 1.6, capMs: 5000 };

export function delayMs(policy: BackoffPolicy, step: number): number {
  return Math.round(Math.min(policy.initialMs * policy.factor ** step, policy.capMs));
}
