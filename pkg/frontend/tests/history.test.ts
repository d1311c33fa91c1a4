import { describe, expect, it } from "vitest";

import type { GenerateRequest } from "../src/api.js";
import { SessionHistory, requestKey, stableStringify } from "../src/history.js";

function baseRequest(): GenerateRequest {
  return {
    base_png: "aGVsbG8=",
    bbox: { x: 4, y: 8, w: 16, h: 16 },
    text: { attrs: { shape: "ellipse", color: "red", size: "large" } },
    seed: 7,
    mode: "full_paste",
  };
}

describe("stableStringify", () => {
  it("is insensitive to key order", () => {
    expect(stableStringify({ a: 1, b: [2, { c: 3, d: 4 }] })).toEqual(
      stableStringify({ b: [2, { d: 4, c: 3 }], a: 1 }),
    );
  });

  it("drops undefined optionals so omitted and absent agree", () => {
    const a = { ...baseRequest(), return_debug: undefined };
    expect(requestKey(a as GenerateRequest)).toEqual(requestKey(baseRequest()));
  });
});

describe("SessionHistory", () => {
  it("stores request JSON only", () => {
    const h = new SessionHistory();
    const entry = h.add(baseRequest());
    expect(Object.keys(entry)).not.toContain("images");
    expect(entry.request).toEqual(baseRequest());
  });

  it("gains a distinct entry when only the seed changes", () => {
    const h = new SessionHistory();
    const a = h.add(baseRequest());
    const b = h.add({ ...baseRequest(), seed: 8 });
    expect(b.id).not.toEqual(a.id);
    expect(b.key).not.toEqual(a.key);
  });

  it("marks exact resubmissions as repeats without merging them", () => {
    const h = new SessionHistory();
    const a = h.add(baseRequest());
    const b = h.add(baseRequest());
    expect(h.entries).toHaveLength(2);
    expect(h.repeatsOf(b)).toEqual([a.id]);
    expect(h.repeatsOf(a)).toEqual([]);
  });

  it("labels toy attribute requests readably", () => {
    const h = new SessionHistory();
    expect(h.add(baseRequest()).label).toEqual(
      "large red ellipse, seed 7, full_paste",
    );
  });
});
