/** Session history of generation attempts.
 *
 * Entries hold the request JSON only, never the returned images: the service
 * is deterministic for a fixed checkpoint, so any panel can be reproduced
 * later by resubmitting the stored request.
 */
import type { GenerateRequest } from "./api.js";

/** JSON.stringify with object keys sorted at every level, so two requests
 * that differ only in key order get the same key. */
export function stableStringify(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => JSON.stringify(k) + ":" + stableStringify(v));
    return "{" + entries.join(",") + "}";
  }
  return JSON.stringify(value);
}

export function requestKey(req: GenerateRequest): string {
  return stableStringify(req);
}

export interface HistoryEntry {
  id: number;
  request: GenerateRequest;
  key: string;
  label: string;
}

function describe(req: GenerateRequest): string {
  const text =
    "attrs" in req.text
      ? [
          req.text.attrs.size,
          typeof req.text.attrs.color === "string"
            ? req.text.attrs.color
            : "rgb",
          req.text.attrs.shape,
        ].join(" ")
      : `row ${req.text.row}`;
  return `${text}, seed ${req.seed}, ${req.mode}`;
}

export class SessionHistory {
  private next = 1;
  readonly entries: HistoryEntry[] = [];

  /** Every submission is recorded, including exact repeats; repeats share a
   * key so the UI can mark them as reproductions. */
  add(request: GenerateRequest): HistoryEntry {
    const entry: HistoryEntry = {
      id: this.next++,
      request,
      key: requestKey(request),
      label: describe(request),
    };
    this.entries.push(entry);
    return entry;
  }

  get(id: number): HistoryEntry | undefined {
    return this.entries.find((e) => e.id === id);
  }

  /** ids of earlier entries with the same request */
  repeatsOf(entry: HistoryEntry): number[] {
    return this.entries
      .filter((e) => e.key === entry.key && e.id < entry.id)
      .map((e) => e.id);
  }
}
