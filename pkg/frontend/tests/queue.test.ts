import { describe, expect, it } from "vitest";

import { SerialQueue } from "../src/queue.js";

function deferred<T>() {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("SerialQueue", () => {
  it("runs at most one task at a time, in submission order", async () => {
    const q = new SerialQueue();
    const events: string[] = [];
    const gate = deferred<void>();

    const first = q.submit(async () => {
      events.push("first start");
      await gate.promise;
      events.push("first end");
      return 1;
    });
    const second = q.submit(async () => {
      events.push("second start");
      return 2;
    });

    // let the first task start; the second must still be waiting
    await Promise.resolve();
    expect(events).toEqual(["first start"]);
    expect(q.depth).toBe(1);

    gate.resolve();
    expect(await first).toBe(1);
    expect(await second).toBe(2);
    expect(events).toEqual(["first start", "first end", "second start"]);
    expect(q.busy).toBe(false);
  });

  it("keeps serving after a task rejects", async () => {
    const q = new SerialQueue();
    const boom = q.submit(async () => {
      throw new Error("boom");
    });
    await expect(boom).rejects.toThrow("boom");
    expect(await q.submit(async () => "ok")).toBe("ok");
  });
});
