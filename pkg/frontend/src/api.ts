// Thin client over the documented workcell HTTP API. The base URL defaults
// to the serving origin; override with ?api=http://host:port when the panel
// is hosted elsewhere.

import type { SessionSnapshot, StreamItem } from "./types.js";

export function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  return (override ?? "").replace(/\/$/, "");
}

export async function fetchSession(
  base: string,
): Promise<SessionSnapshot | null> {
  const resp = await fetch(`${base}/session`);
  if (resp.status === 404) return null;
  if (!resp.ok) throw new Error(`GET /session -> ${resp.status}`);
  return (await resp.json()) as SessionSnapshot;
}

export async function postStartSession(
  base: string,
  productSerial: string,
  procedurePath: string,
): Promise<{ ok: boolean; error?: string }> {
  const resp = await fetch(`${base}/session`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      product_serial: productSerial,
      procedure: procedurePath,
    }),
  });
  if (resp.ok) return { ok: true };
  try {
    const body = await resp.json();
    return { ok: false, error: body.error ?? `HTTP ${resp.status}` };
  } catch {
    return { ok: false, error: `HTTP ${resp.status}` };
  }
}

export async function postConfirm(
  base: string,
  stepId: string,
): Promise<boolean> {
  const resp = await fetch(`${base}/steps/${stepId}/confirm`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: "{}",
  });
  return resp.ok;
}

export async function postAcknowledge(base: string): Promise<boolean> {
  const resp = await fetch(`${base}/alarm/ack`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: "{}",
  });
  return resp.ok;
}

export function frameUrl(base: string, cameraId: string, bust: number): string {
  return `${base}/cameras/${cameraId}/frame.png?t=${bust}`;
}

/** Subscribe to the server-push stream from a given position. */
export function subscribe(
  base: string,
  from: number,
  onItem: (item: StreamItem) => void,
  onError?: () => void,
): EventSource {
  const source = new EventSource(`${base}/events?from=${from}`);
  source.onmessage = (message) => {
    try {
      onItem(JSON.parse(message.data) as StreamItem);
    } catch {
      // malformed stream item: skip rather than wedge the panel
    }
  };
  if (onError) source.onerror = onError;
  return source;
}
