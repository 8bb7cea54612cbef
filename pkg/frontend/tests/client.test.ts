import { describe, expect, it } from "vitest";

import { InferenceClient } from "../src/client.js";
import { InferResponse } from "../src/types.js";

function fakeResponse(tag: number): InferResponse {
  return {
    confidence: [1, 1, 1, 1],
    endpoints: [
      { role: "long_left", x: tag, y: 0 },
      { role: "long_right", x: tag + 10, y: 0 },
      { role: "short_top", x: tag + 5, y: -5 },
      { role: "short_bottom", x: tag + 5, y: 5 },
    ],
    long_len_px: 10,
    low_confidence: false,
    mask_contour: null,
    model_version: "test",
    short_len_px: 10,
  };
}

function fetchStub(delays: number[]) {
  let call = 0;
  const fn = (async (_url: string, _init?: RequestInit) => {
    const tag = call++;
    await new Promise((resolve) => setTimeout(resolve, delays[tag] ?? 0));
    return {
      ok: true,
      status: 200,
      json: async () => fakeResponse(tag),
      text: async () => "",
    } as unknown as Response;
  }) as typeof fetch;
  return fn;
}

describe("InferenceClient sequencing", () => {
  const bbox = { x: 0, y: 0, w: 10, h: 10 };

  it("applies in-order responses", async () => {
    const client = new InferenceClient("http://x", fetchStub([0, 0]));
    const first = await client.infer("img", bbox);
    const second = await client.infer("img", bbox);
    expect(first?.seq).toBe(0);
    expect(second?.seq).toBe(1);
  });

  it("discards a stale response that finishes late", async () => {
    const client = new InferenceClient("http://x", fetchStub([50, 0]));
    const slowFirst = client.infer("img", bbox);
    const fastSecond = client.infer("img", bbox);
    const [first, second] = await Promise.all([slowFirst, fastSecond]);
    expect(second?.seq).toBe(1);
    expect(first).toBeNull(); // superseded: must not render
  });

  it("raises on http errors", async () => {
    const failing = (async () =>
      ({ ok: false, status: 400, text: async () => "bad bbox" }) as unknown as Response) as typeof fetch;
    const client = new InferenceClient("http://x", failing);
    await expect(client.infer("img", bbox)).rejects.toThrow("400");
  });
});
