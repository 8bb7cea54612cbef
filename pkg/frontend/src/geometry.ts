/** Coordinate math for the bbox tool and the endpoint editor.
 *
 * All stored coordinates are original-image pixels; zooming only affects
 * how they are painted, never their values.
 */

import { Bbox, Endpoint } from "./types.js";

/** Normalize a drag between two corners into a bbox (any drag direction). */
export function dragToBbox(x0: number, y0: number, x1: number, y1: number): Bbox {
  return {
    x: Math.min(x0, x1),
    y: Math.min(y0, y1),
    w: Math.abs(x1 - x0),
    h: Math.abs(y1 - y0),
  };
}

/** Clamp a bbox into the image; degenerate results keep w/h at 0. */
export function clampBbox(b: Bbox, width: number, height: number): Bbox {
  const x = Math.max(0, Math.min(b.x, width));
  const y = Math.max(0, Math.min(b.y, height));
  const w = Math.min(b.w, width - x);
  const h = Math.min(b.h, height - y);
  return { x, y, w: Math.max(0, w), h: Math.max(0, h) };
}

export function distance(ax: number, ay: number, bx: number, by: number): number {
  return Math.hypot(bx - ax, by - ay);
}

export function axisLength(a: Endpoint, b: Endpoint): number {
  return distance(a.x, a.y, b.x, b.y);
}

/** Index of the endpoint within grab range of (x, y), or -1. */
export function hitTestEndpoint(
  endpoints: Endpoint[],
  x: number,
  y: number,
  radiusPx: number,
): number {
  let best = -1;
  let bestDist = radiusPx;
  endpoints.forEach((p, i) => {
    const d = distance(p.x, p.y, x, y);
    if (d <= bestDist) {
      best = i;
      bestDist = d;
    }
  });
  return best;
}
