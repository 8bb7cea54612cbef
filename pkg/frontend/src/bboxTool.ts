/** Rubber-band bounding-box gesture in image pixel coordinates. */

import { clampBbox, dragToBbox } from "./geometry.js";
import { Bbox } from "./types.js";

export class BboxTool {
  private start: [number, number] | null = null;
  current: Bbox | null = null;

  constructor(
    private readonly imageSize: () => { width: number; height: number } | null,
    private readonly onRelease: (bbox: Bbox) => void,
  ) {}

  pointerDown(x: number, y: number): void {
    if (!this.imageSize()) {
      return; // nothing loaded yet
    }
    this.start = [x, y];
    this.current = dragToBbox(x, y, x, y);
  }

  pointerMove(x: number, y: number): void {
    if (!this.start) {
      return;
    }
    this.current = dragToBbox(this.start[0], this.start[1], x, y);
  }

  /** Zero-area drags are ignored; valid releases emit exactly one bbox. */
  pointerUp(x: number, y: number): void {
    if (!this.start) {
      return;
    }
    const size = this.imageSize()!;
    const bbox = clampBbox(
      dragToBbox(this.start[0], this.start[1], x, y),
      size.width,
      size.height,
    );
    this.start = null;
    this.current = null;
    if (bbox.w > 0 && bbox.h > 0) {
      this.onRelease(bbox);
    }
  }

  get active(): boolean {
    return this.start !== null;
  }
}
