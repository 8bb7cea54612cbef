/** Annotation session state: the accept/correct workflow.
 *
 * The server proposes endpoints; the user drags them into place (pure
 * client-side edits, no re-inference) and accepts the result. Only
 * accepted annotations can be exported.
 */

import { axisLength } from "./geometry.js";
import { Bbox, Endpoint, EndpointRole, InferResponse } from "./types.js";

export interface LoadedImage {
  name: string;
  width: number;
  height: number;
  base64: string;
}

export interface AcceptedAnnotation {
  imageName: string;
  endpoints: Endpoint[];
}

export class SessionState {
  image: LoadedImage | null = null;
  bbox: Bbox | null = null;
  lastResponse: InferResponse | null = null;
  /** working copy of the endpoints the user may drag */
  editedEndpoints: Endpoint[] = [];
  accepted: AcceptedAnnotation[] = [];

  loadImage(image: LoadedImage): void {
    this.image = image;
    this.bbox = null;
    this.lastResponse = null;
    this.editedEndpoints = [];
  }

  applyResponse(bbox: Bbox, response: InferResponse): void {
    this.bbox = bbox;
    this.lastResponse = response;
    this.editedEndpoints = response.endpoints.map((p) => ({ ...p }));
  }

  moveEndpoint(role: EndpointRole, x: number, y: number): void {
    const p = this.editedEndpoints.find((e) => e.role === role);
    if (!p) {
      throw new Error(`no endpoint with role ${role}`);
    }
    p.x = x;
    p.y = y;
  }

  endpoint(role: EndpointRole): Endpoint {
    const p = this.editedEndpoints.find((e) => e.role === role);
    if (!p) {
      throw new Error(`no endpoint with role ${role}`);
    }
    return p;
  }

  get longLength(): number {
    return axisLength(this.endpoint("long_left"), this.endpoint("long_right"));
  }

  get shortLength(): number {
    return axisLength(this.endpoint("short_top"), this.endpoint("short_bottom"));
  }

  get canAccept(): boolean {
    return this.image !== null && this.editedEndpoints.length === 4;
  }

  get canExport(): boolean {
    return this.accepted.length > 0;
  }

  accept(): void {
    if (!this.canAccept || !this.image) {
      throw new Error("nothing to accept");
    }
    this.accepted.push({
      imageName: this.image.name,
      endpoints: this.editedEndpoints.map((p) => ({ ...p })),
    });
  }
}
