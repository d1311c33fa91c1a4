/** Typed client for the inference service HTTP API. */

export interface BboxJson {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface ToyAttrs {
  shape: string;
  color: string | [number, number, number];
  size: string;
}

export type TextSelection = { attrs: ToyAttrs } | { row: number };

export interface OverrideJson {
  mode: "learned" | "constant" | "per_block";
  values?: number[];
}

export interface GenerateRequest {
  base_png: string; // base64 PNG bytes
  bbox: BboxJson;
  text: TextSelection;
  seed: number;
  mode: "full_paste" | "mask_blend";
  return_debug?: boolean;
  overrides?: OverrideJson;
}

export interface GenerateResponse {
  composite_png: string;
  crop_png: string;
  mask_png: string;
  seed: number;
  bbox: BboxJson;
  mode: string;
  timing_ms: number;
  switch_pngs?: string[];
}

export interface HealthInfo {
  status: string;
  checkpoint_loaded: boolean;
}

export interface ToyEmbeddingsInfo {
  kind: "toy_attributes";
  shapes: string[];
  colors: Record<string, [number, number, number]>;
  sizes: string[];
  size_fractions: Record<string, number>;
}

export interface TableEmbeddingsInfo {
  kind: "table";
  count: number;
  dim: number;
  image_ids: string[];
}

export type EmbeddingsInfo = ToyEmbeddingsInfo | TableEmbeddingsInfo;

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ServiceError";
  }
}

async function parseDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return `${res.status} ${res.statusText}`;
  }
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) throw new ServiceError(res.status, await parseDetail(res));
    return (await res.json()) as T;
  }

  health(): Promise<HealthInfo> {
    return this.get("/health");
  }

  model(): Promise<Record<string, unknown>> {
    return this.get("/model");
  }

  embeddings(): Promise<EmbeddingsInfo> {
    return this.get("/embeddings");
  }

  async generate(req: GenerateRequest): Promise<GenerateResponse> {
    const res = await fetch(this.baseUrl + "/generate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!res.ok) throw new ServiceError(res.status, await parseDetail(res));
    return (await res.json()) as GenerateResponse;
  }
}
