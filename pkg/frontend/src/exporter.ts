/** CSV export in the training manifest format.
 *
 * Header: image,x1,y1,x2,y2,x3,y3,x4,y4 with (x1,y1)-(x2,y2) the long
 * axis, coordinates in original-image pixels. If the user's edits left
 * the "short" axis longer, the axes swap on export so the manifest
 * invariant holds.
 */

import { axisLength } from "./geometry.js";
import { AcceptedAnnotation } from "./session.js";
import { Endpoint } from "./types.js";

export const MANIFEST_HEADER = "image,x1,y1,x2,y2,x3,y3,x4,y4";

function byRole(endpoints: Endpoint[], role: string): Endpoint {
  const p = endpoints.find((e) => e.role === role);
  if (!p) {
    throw new Error(`annotation lacks endpoint ${role}`);
  }
  return p;
}

/** Full-precision number formatting so reloading loses nothing. */
function fmt(v: number): string {
  return String(v);
}

export function annotationRow(entry: AcceptedAnnotation): string {
  let longPair = [byRole(entry.endpoints, "long_left"), byRole(entry.endpoints, "long_right")];
  let shortPair = [byRole(entry.endpoints, "short_top"), byRole(entry.endpoints, "short_bottom")];
  if (axisLength(longPair[0], longPair[1]) < axisLength(shortPair[0], shortPair[1])) {
    [longPair, shortPair] = [shortPair, longPair];
  }
  const coords = [...longPair, ...shortPair].flatMap((p) => [fmt(p.x), fmt(p.y)]);
  return [entry.imageName, ...coords].join(",");
}

export function exportManifest(accepted: AcceptedAnnotation[]): string {
  if (accepted.length === 0) {
    throw new Error("nothing accepted yet");
  }
  return [MANIFEST_HEADER, ...accepted.map(annotationRow)].join("\n") + "\n";
}
