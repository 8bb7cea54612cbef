/** Wire types mirroring the inference service's JSON API. */

export interface Bbox {
  x: number;
  y: number;
  w: number;
  h: number;
}

export type EndpointRole = "long_left" | "long_right" | "short_top" | "short_bottom";

export const ENDPOINT_ROLES: EndpointRole[] = [
  "long_left",
  "long_right",
  "short_top",
  "short_bottom",
];

export interface Endpoint {
  role: EndpointRole;
  /** original-image pixels */
  x: number;
  y: number;
}

export interface InferResponse {
  confidence: number[];
  endpoints: Endpoint[];
  long_len_px: number;
  low_confidence: boolean;
  mask_contour: [number, number][] | null;
  model_version: string;
  short_len_px: number;
}

export interface HealthResponse {
  status: string;
  model_version: string | null;
  uptime_s: number;
}

export interface FieldError {
  field: string;
  message: string;
}
