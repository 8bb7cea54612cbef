/** HTTP client with per-gesture request sequencing.
 *
 * Every bbox gesture issues exactly one /infer call. Responses carry the
 * sequence number of their request; anything older than the newest
 * applied response is discarded, so rapid successive gestures only ever
 * render the latest result.
 */

import { Bbox, HealthResponse, InferResponse } from "./types.js";

export interface SequencedResponse {
  seq: number;
  response: InferResponse;
}

export class InferenceClient {
  private readonly baseUrl: string;
  private nextSeq = 0;
  private lastApplied = -1;

  constructor(baseUrl: string, private readonly fetchFn: typeof fetch = fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  async health(): Promise<HealthResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/healthz`);
    return (await res.json()) as HealthResponse;
  }

  /**
   * POST one inference request; resolves to null when a newer response
   * has already been applied (the stale result must not render).
   */
  async infer(imageBase64: string, bbox: Bbox): Promise<SequencedResponse | null> {
    const seq = this.nextSeq++;
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/infer`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image: imageBase64, bbox }),
    });
    if (!res.ok) {
      const detail = await res.text();
      throw new Error(`infer failed (${res.status}): ${detail}`);
    }
    const response = (await res.json()) as InferResponse;
    if (seq <= this.lastApplied) {
      return null; // superseded by a newer gesture
    }
    this.lastApplied = seq;
    return { seq, response };
  }

  get pendingSeq(): number {
    return this.nextSeq;
  }
}
