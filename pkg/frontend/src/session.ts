// Session state: knob/seed/prompt settings, request construction, the
// result history, and the stale-response guard.
//
// Every numeric default here starts undefined and is filled from /health,
// so the UI never invents model parameters.

import { GenerateRequest, GenerateResponse, GeneratedImage } from "./api.js";

export interface HistoryEntry {
  request: GenerateRequest;
  images: GeneratedImage[];
  modelId: string;
  at: number;
}

export class Session {
  prompt = "";
  gamma = 0;
  steps = 0;
  seed = 0;
  pinSeed = true; // hold noise fixed so the knob's effect is visually isolated
  history: HistoryEntry[] = [];

  private issued = 0;
  private applied = 0;

  /** Adopt the service's knob defaults (slider bounds come from S). */
  adoptDefaults(S_default: number, gamma_default: number): void {
    this.steps = S_default;
    this.gamma = Math.min(gamma_default, S_default);
  }

  setGamma(value: number): void {
    if (!Number.isInteger(value) || value < 0 || value > this.steps) {
      throw new Error(`gamma must be an integer in [0, ${this.steps}]`);
    }
    this.gamma = value;
  }

  gammaPercent(): number {
    return this.steps === 0 ? 0 : Math.round((100 * this.gamma) / this.steps);
  }

  rerollSeed(random: () => number = Math.random): number {
    this.seed = Math.floor(random() * 2 ** 31);
    return this.seed;
  }

  /** Evenly spaced gamma grid over [0, S], endpoints included. */
  spectrumGrid(count = 6): number[] {
    if (count < 2) throw new Error("spectrum needs at least 2 values");
    const grid: number[] = [];
    for (let i = 0; i < count; i++) {
      grid.push(Math.round((i * this.steps) / (count - 1)));
    }
    return [...new Set(grid)].sort((a, b) => a - b);
  }

  buildRequest(sketchB64: string, spectrum?: number[]): GenerateRequest {
    const req: GenerateRequest = {
      sketch_png_b64: sketchB64,
      prompt: this.prompt,
      gamma: this.gamma,
      steps: this.steps,
      seed: this.seed,
    };
    if (spectrum) req.return_spectrum = spectrum;
    return req;
  }

  /** Returns a token identifying this in-flight request. */
  beginRequest(): number {
    this.issued += 1;
    return this.issued;
  }

  /**
   * Record a response unless a newer request has already been applied
   * (out-of-order replies are discarded). Returns whether it was applied.
   */
  applyResponse(token: number, request: GenerateRequest, response: GenerateResponse): boolean {
    if (token <= this.applied) return false;
    this.applied = token;
    this.history.push({
      request,
      images: response.images,
      modelId: response.model_id,
      at: Date.now(),
    });
    return true;
  }

  /** Exact JSON for replaying a history entry's request. */
  requestJson(index: number): string {
    return JSON.stringify(this.history[index].request, null, 2);
  }
}
