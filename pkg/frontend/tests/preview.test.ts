import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { PreviewLoop } from "../src/preview.js";

function deferred<T>() {
  let resolve!: (value: T) => void;
  let reject!: (err: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

const blob = (tag: string) => new Blob([tag]);

describe("PreviewLoop", () => {
  beforeEach(() => {
    vi.useFakeTimers();
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("debounces rapid slider scrubs into a single request", async () => {
    const calls: unknown[] = [];
    const loop = new PreviewLoop(
      async (body) => {
        calls.push(body);
        return blob("ok");
      },
      { onImage: () => {}, onError: () => {} },
      50,
    );
    for (let az = 0; az < 30; az++) loop.request({ az });
    expect(calls).toHaveLength(0);
    await vi.advanceTimersByTimeAsync(60);
    expect(calls).toEqual([{ az: 29 }]);
  });

  it("discards stale responses by sequence number", async () => {
    const pending: Array<{ promise: Promise<Blob>; resolve: (b: Blob) => void }> = [];
    const rendered: string[] = [];
    const loop = new PreviewLoop(
      (body) => {
        const d = deferred<Blob>();
        pending.push(d);
        return d.promise;
      },
      {
        onImage: async (b) => rendered.push(await b.text()),
        onError: () => {},
      },
      10,
    );
    loop.request({ step: 1 });
    await vi.advanceTimersByTimeAsync(15);  // request 1 in flight
    loop.request({ step: 2 });
    await vi.advanceTimersByTimeAsync(15);  // request 2 coalesces as pending
    expect(pending).toHaveLength(1);
    pending[0].resolve(blob("first"));
    await vi.advanceTimersByTimeAsync(1);   // response 1 renders, request 2 issues
    expect(pending).toHaveLength(2);
    pending[1].resolve(blob("second"));
    await vi.advanceTimersByTimeAsync(1);
    expect(rendered).toEqual(["first", "second"]);
    expect(loop.lastRenderedSeq).toBe(2);
  });

  it("keeps only monotonically newer previews", async () => {
    // Simulate a transport that delivers an old response after a new one.
    const rendered: string[] = [];
    const loop = new PreviewLoop(async () => blob("x"), {
      onImage: (b, seq) => rendered.push(`seq${seq}`),
      onError: () => {},
    });
    // drive the internals directly: issue two overlapping requests
    (loop as any).issue({ a: 1 });
    (loop as any).inFlight = false;
    (loop as any).issue({ a: 2 });
    await vi.advanceTimersByTimeAsync(1);
    await Promise.resolve();
    expect(rendered).toContain("seq1");
    expect(loop.lastRenderedSeq).toBe(2);
  });

  it("reports errors and preserves loop state", async () => {
    const errors: string[] = [];
    let fail = true;
    const loop = new PreviewLoop(
      async () => {
        if (fail) throw new Error("boom");
        return blob("fine");
      },
      { onImage: () => {}, onError: (m) => errors.push(m) },
      10,
    );
    loop.request({});
    await vi.advanceTimersByTimeAsync(15);
    expect(errors).toEqual(["boom"]);
    fail = false;
    loop.request({});
    await vi.advanceTimersByTimeAsync(15);
    expect(loop.lastRenderedSeq).toBeGreaterThan(0);
  });

  it("never runs more than one request at a time", async () => {
    let inFlight = 0;
    let maxInFlight = 0;
    const loop = new PreviewLoop(
      async () => {
        inFlight += 1;
        maxInFlight = Math.max(maxInFlight, inFlight);
        await new Promise((r) => setTimeout(r, 20));
        inFlight -= 1;
        return blob("ok");
      },
      { onImage: () => {}, onError: () => {} },
      5,
    );
    loop.request({ n: 1 });
    await vi.advanceTimersByTimeAsync(7);
    loop.request({ n: 2 });
    await vi.advanceTimersByTimeAsync(7);
    loop.request({ n: 3 });
    await vi.advanceTimersByTimeAsync(100);
    expect(maxInFlight).toBe(1);
    expect(loop.issuedCount).toBeLessThanOrEqual(2);
  });
});
