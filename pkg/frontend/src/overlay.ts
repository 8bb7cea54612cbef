/** Canvas overlay: axes, mask contour, draggable endpoint handles.
 *
 * Drawing is a pure function of (session, zoom); dragging goes through
 * hit-testing in image coordinates so zoom never changes what gets
 * edited or exported.
 */

import { hitTestEndpoint } from "./geometry.js";
import { SessionState } from "./session.js";
import { EndpointRole } from "./types.js";

const HANDLE_RADIUS_PX = 6;

export class OverlayEditor {
  private dragging: EndpointRole | null = null;

  constructor(private readonly session: SessionState) {}

  /** Begin a drag if (x, y) (image pixels) lands on a handle. */
  pointerDown(x: number, y: number, grabRadius = HANDLE_RADIUS_PX): boolean {
    const idx = hitTestEndpoint(this.session.editedEndpoints, x, y, grabRadius);
    if (idx < 0) {
      return false;
    }
    this.dragging = this.session.editedEndpoints[idx].role;
    return true;
  }

  pointerMove(x: number, y: number): boolean {
    if (!this.dragging) {
      return false;
    }
    this.session.moveEndpoint(this.dragging, x, y);
    return true;
  }

  pointerUp(): void {
    this.dragging = null;
  }

  get activeRole(): EndpointRole | null {
    return this.dragging;
  }

  /** Paint the overlay; a no-op when the 2D context is unavailable. */
  draw(ctx: CanvasRenderingContext2D | null, zoom: number): void {
    if (!ctx || !this.session.lastResponse) {
      return;
    }
    const pts = this.session.editedEndpoints;
    const at = (v: number) => v * zoom;
    const byRole = (role: EndpointRole) => pts.find((p) => p.role === role)!;

    const contour = this.session.lastResponse.mask_contour;
    if (contour && contour.length > 1) {
      ctx.beginPath();
      ctx.moveTo(at(contour[0][0]), at(contour[0][1]));
      for (const [cx, cy] of contour.slice(1)) {
        ctx.lineTo(at(cx), at(cy));
      }
      ctx.closePath();
      ctx.strokeStyle = "rgba(80, 200, 120, 0.9)";
      ctx.stroke();
    }

    for (const [a, b, color] of [
      ["long_left", "long_right", "#ff5050"],
      ["short_top", "short_bottom", "#4090ff"],
    ] as [EndpointRole, EndpointRole, string][]) {
      const pa = byRole(a);
      const pb = byRole(b);
      ctx.beginPath();
      ctx.moveTo(at(pa.x), at(pa.y));
      ctx.lineTo(at(pb.x), at(pb.y));
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.stroke();
    }

    const confidence = this.session.lastResponse.confidence;
    pts.forEach((p, i) => {
      ctx.beginPath();
      ctx.arc(at(p.x), at(p.y), HANDLE_RADIUS_PX, 0, 2 * Math.PI);
      // confidence shows as handle opacity
      ctx.fillStyle = `rgba(255, 255, 0, ${Math.max(0.25, confidence[i] ?? 1)})`;
      ctx.fill();
      ctx.strokeStyle = "#333";
      ctx.stroke();
    });

    ctx.fillStyle = "#fff";
    ctx.font = "13px sans-serif";
    ctx.fillText(
      `long ${this.session.longLength.toFixed(1)}px  short ${this.session.shortLength.toFixed(1)}px`,
      8,
      16,
    );
  }
}
