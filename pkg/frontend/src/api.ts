// Typed client for the generation service wire contract.

export interface GenerateRequest {
  sketch_png_b64: string;
  prompt: string;
  gamma: number;
  steps: number;
  seed: number;
  return_spectrum?: number[];
}

export interface GeneratedImage {
  gamma: number;
  png_b64: string;
}

export interface GenerateResponse {
  images: GeneratedImage[];
  model_id: string;
  timings_ms: number[];
}

export interface HealthResponse {
  status: string;
  model_id: string;
  image_size: number;
  S_default: number;
  gamma_default: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "", private fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail = (body as { detail?: string }).detail ?? `HTTP ${res.status}`;
      throw new ApiError(res.status, detail);
    }
    return body as T;
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("/health");
  }

  config(): Promise<Record<string, unknown>> {
    return this.request<Record<string, unknown>>("/config");
  }

  generate(req: GenerateRequest): Promise<GenerateResponse> {
    return this.request<GenerateResponse>("/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}
