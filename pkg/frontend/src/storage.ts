/** Credential persistence in browser local storage (dev-trust deployment). */

import type { Credentials } from "./api.js";

const KEY = "plantportal.credentials";

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export function loadCredentials(store: KeyValueStore): Credentials | null {
  const raw = store.getItem(KEY);
  if (!raw) return null;
  try {
    const doc = JSON.parse(raw);
    if (typeof doc.username === "string" && typeof doc.password === "string" && doc.username) {
      return { username: doc.username, password: doc.password };
    }
  } catch {
    // fall through to null
  }
  return null;
}

export function saveCredentials(store: KeyValueStore, credentials: Credentials): void {
  store.setItem(KEY, JSON.stringify(credentials));
}

export function clearCredentials(store: KeyValueStore): void {
  store.removeItem(KEY);
}
