/**
 * Typed client for the crack annotation service.
 *
 * Every method maps one HTTP endpoint and returns the parsed JSON body.
 * Coordinates are image-space pixels throughout; the client never rescales.
 * Non-2xx responses become ApiError with the server's detail payload intact,
 * so callers can surface endpoint/vertex-level messages next to the marker
 * that caused them.
 */

export interface TrackVertex {
  x: number;
  y: number;
  theta: number;
}

export interface CostStats {
  vertices: number;
  mean: number;
  min: number;
  max: number;
}

export interface DownscaleInfo {
  width: number;
  height: number;
  scale_x: number;
  scale_y: number;
}

export interface TrackResponse {
  track: TrackVertex[];
  cost_stats: CostStats;
  downscaled: DownscaleInfo | null;
}

/** [{s, left, right}, ...] ordered along the track, one entry per vertex. */
export interface WidthEntry {
  s: number;
  left: number;
  right: number;
}

export interface SegmentResponse {
  mask_png_base64: string;
  widths: WidthEntry[];
}

export interface UploadResponse {
  image_id: string;
  width: number;
  height: number;
}

/** Metric fields accepted by POST /track; unset fields keep server defaults. */
export interface MetricPatch {
  xi?: number;
  zeta?: number;
  lambda_data?: number;
  cost_mu?: number;
  cost_power?: number;
  theta_stiffness?: number;
  symmetric?: boolean;
}

export interface WidthPatch {
  sigma?: number;
  max_width?: number;
}

export type EndpointPair = [[number, number], [number, number]];

/** Structured 4xx/5xx detail; the service sends either a string or an
 * object with a message plus the offending endpoint or vertex. */
export interface ErrorDetail {
  message: string;
  endpoint?: [number, number];
  vertex?: [number, number];
}

export class ApiError extends Error {
  readonly status: number;
  readonly detail: ErrorDetail;

  constructor(status: number, detail: unknown) {
    const normalized = normalizeDetail(detail);
    super(`${status}: ${normalized.message}`);
    this.name = "ApiError";
    this.status = status;
    this.detail = normalized;
  }
}

function normalizeDetail(detail: unknown): ErrorDetail {
  if (typeof detail === "string") return { message: detail };
  if (detail !== null && typeof detail === "object") {
    const d = detail as Record<string, unknown>;
    const out: ErrorDetail = {
      message: typeof d.message === "string" ? d.message : JSON.stringify(detail),
    };
    if (Array.isArray(d.endpoint) && d.endpoint.length === 2) {
      out.endpoint = [Number(d.endpoint[0]), Number(d.endpoint[1])];
    }
    if (Array.isArray(d.vertex) && d.vertex.length === 2) {
      out.vertex = [Number(d.vertex[0]), Number(d.vertex[1])];
    }
    return out;
  }
  return { message: String(detail) };
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AnnotClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl: FetchLike = (...a) => globalThis.fetch(...a)) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl;
  }

  async uploadImage(png: Uint8Array): Promise<UploadResponse> {
    const res = await this.fetchImpl(`${this.base}/images`, {
      method: "POST",
      headers: { "content-type": "image/png" },
      body: png as unknown as BodyInit,
    });
    return this.parse<UploadResponse>(res);
  }

  async fetchImage(imageId: string): Promise<Uint8Array> {
    const res = await this.fetchImpl(`${this.base}/images/${imageId}`);
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return new Uint8Array(await res.arrayBuffer());
  }

  async requestTrack(
    imageId: string,
    endpoints: EndpointPair,
    params?: MetricPatch,
  ): Promise<TrackResponse> {
    const body: Record<string, unknown> = { endpoints };
    if (params !== undefined) body.params = params;
    return this.postJson<TrackResponse>(`/images/${imageId}/track`, body);
  }

  async requestSegment(
    imageId: string,
    track: TrackVertex[],
    widthParams?: WidthPatch,
  ): Promise<SegmentResponse> {
    const body: Record<string, unknown> = { track };
    if (widthParams !== undefined) body.width_params = widthParams;
    return this.postJson<SegmentResponse>(`/images/${imageId}/segment`, body);
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.base}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return this.parse<T>(res);
  }

  private async parse<T>(res: Response): Promise<T> {
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }
}

async function errorDetail(res: Response): Promise<unknown> {
  try {
    const payload = (await res.json()) as { detail?: unknown };
    return payload.detail ?? payload;
  } catch {
    return res.statusText;
  }
}

export function decodeBase64(text: string): Uint8Array {
  if (typeof atob === "function") {
    const raw = atob(text);
    const out = new Uint8Array(raw.length);
    for (let i = 0; i < raw.length; i++) out[i] = raw.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(text, "base64"));
}
