import { describe, expect, it } from "vitest";

import { GenerateResponse } from "../src/api.js";
import { Session } from "../src/session.js";

function fakeResponse(gammas: number[]): GenerateResponse {
  return {
    images: gammas.map((g) => ({ gamma: g, png_b64: `img${g}` })),
    model_id: "abc123",
    timings_ms: gammas.map(() => 1.0),
  };
}

describe("session defaults", () => {
  it("adopts knob bounds from the service, never inventing them", () => {
    const s = new Session();
    expect(s.steps).toBe(0); // nothing invented before /health
    s.adoptDefaults(50, 20);
    expect(s.steps).toBe(50);
    expect(s.gamma).toBe(20);
  });

  it("rejects gamma outside the slider bounds", () => {
    const s = new Session();
    s.adoptDefaults(50, 20);
    expect(() => s.setGamma(51)).toThrow();
    expect(() => s.setGamma(-1)).toThrow();
    s.setGamma(50);
    expect(s.gammaPercent()).toBe(100);
  });
});

describe("spectrum grid", () => {
  it("is the even 6-point grid over [0, S]", () => {
    const s = new Session();
    s.adoptDefaults(50, 20);
    expect(s.spectrumGrid(6)).toEqual([0, 10, 20, 30, 40, 50]);
  });

  it("dedupes for tiny S", () => {
    const s = new Session();
    s.adoptDefaults(2, 1);
    expect(s.spectrumGrid(6)).toEqual([0, 1, 2]);
  });
});

describe("request construction", () => {
  it("changing only the knob changes only the knob field", () => {
    const s = new Session();
    s.adoptDefaults(50, 20);
    s.prompt = "a red circle";
    s.seed = 7;
    const a = s.buildRequest("SKETCH");
    s.setGamma(35);
    const b = s.buildRequest("SKETCH");
    expect(a.gamma).toBe(20);
    expect(b.gamma).toBe(35);
    const { gamma: _ga, ...restA } = a;
    const { gamma: _gb, ...restB } = b;
    expect(restB).toEqual(restA);
  });

  it("spectrum mode includes the grid", () => {
    const s = new Session();
    s.adoptDefaults(50, 20);
    const req = s.buildRequest("SKETCH", s.spectrumGrid(6));
    expect(req.return_spectrum).toEqual([0, 10, 20, 30, 40, 50]);
  });
});

describe("history and the stale-response guard", () => {
  it("records applied responses and replays their exact request JSON", () => {
    const s = new Session();
    s.adoptDefaults(50, 20);
    const req = s.buildRequest("SKETCH");
    const token = s.beginRequest();
    expect(s.applyResponse(token, req, fakeResponse([20]))).toBe(true);
    expect(s.history).toHaveLength(1);
    expect(JSON.parse(s.requestJson(0))).toEqual(req);
  });

  it("discards out-of-order replies", () => {
    const s = new Session();
    s.adoptDefaults(50, 20);
    const first = s.beginRequest();
    const second = s.beginRequest();
    expect(s.applyResponse(second, s.buildRequest("B"), fakeResponse([1]))).toBe(true);
    expect(s.applyResponse(first, s.buildRequest("A"), fakeResponse([0]))).toBe(false);
    expect(s.history).toHaveLength(1);
    expect(s.history[0].request.sketch_png_b64).toBe("B");
  });

  it("re-roll changes the seed deterministically under an injected rng", () => {
    const s = new Session();
    const seed = s.rerollSeed(() => 0.5);
    expect(seed).toBe(2 ** 30);
    expect(s.seed).toBe(2 ** 30);
  });
});
