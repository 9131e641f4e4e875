// Browser glue: sketch canvas, prompt field, detail knob, spectrum strip.

import { ApiClient, ApiError, GeneratedImage } from "./api.js";
import { CanvasState, Stroke, emptyCanvas, exportSketch, strokeCount } from "./raster.js";
import { Session } from "./session.js";

const DISPLAY_SIZE = 320;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class SketchPad {
  state: CanvasState = emptyCanvas();
  private drawing: Stroke | null = null;
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement, private brushWidth = 0.02) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas unavailable");
    this.ctx = ctx;
    canvas.addEventListener("pointerdown", (e) => this.start(e));
    canvas.addEventListener("pointermove", (e) => this.move(e));
    window.addEventListener("pointerup", () => this.end());
    this.redraw();
  }

  private norm(e: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: Math.min(1, Math.max(0, (e.clientX - rect.left) / rect.width)),
      y: Math.min(1, Math.max(0, (e.clientY - rect.top) / rect.height)),
    };
  }

  private start(e: PointerEvent): void {
    this.drawing = { points: [this.norm(e)], width: this.brushWidth };
    this.state.strokes.push(this.drawing);
  }

  private move(e: PointerEvent): void {
    if (!this.drawing) return;
    this.drawing.points.push(this.norm(e));
    this.redraw();
  }

  private end(): void {
    this.drawing = null;
    this.redraw();
  }

  clear(): void {
    this.state = emptyCanvas();
    this.redraw();
  }

  redraw(): void {
    this.ctx.fillStyle = "#111";
    this.ctx.fillRect(0, 0, DISPLAY_SIZE, DISPLAY_SIZE);
    this.ctx.strokeStyle = "#fafafa";
    this.ctx.lineCap = "round";
    this.ctx.lineJoin = "round";
    for (const stroke of this.state.strokes) {
      this.ctx.lineWidth = stroke.width * DISPLAY_SIZE;
      this.ctx.beginPath();
      stroke.points.forEach((p, i) => {
        const x = p.x * DISPLAY_SIZE;
        const y = p.y * DISPLAY_SIZE;
        if (i === 0) this.ctx.moveTo(x, y);
        else this.ctx.lineTo(x, y);
      });
      this.ctx.stroke();
    }
  }
}

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = "block";
}

function clearError(): void {
  el<HTMLDivElement>("error-banner").style.display = "none";
}

function renderImages(images: GeneratedImage[]): void {
  const strip = el<HTMLDivElement>("results");
  strip.innerHTML = "";
  for (const image of images) {
    const cell = document.createElement("figure");
    cell.className = "result-cell";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${image.png_b64}`;
    img.width = 160;
    img.height = 160;
    img.style.imageRendering = "pixelated";
    const caption = document.createElement("figcaption");
    caption.textContent = `gamma = ${image.gamma}`;
    cell.append(img, caption);
    strip.appendChild(cell);
  }
}

function renderHistory(session: Session): void {
  const list = el<HTMLUListElement>("history");
  list.innerHTML = "";
  session.history.forEach((entry, index) => {
    const item = document.createElement("li");
    const thumb = document.createElement("img");
    thumb.src = `data:image/png;base64,${entry.images[0].png_b64}`;
    thumb.width = 48;
    thumb.height = 48;
    thumb.style.imageRendering = "pixelated";
    const label = document.createElement("span");
    const req = entry.request;
    label.textContent = ` gamma=${req.return_spectrum ? req.return_spectrum.join(",") : req.gamma} seed=${req.seed} "${req.prompt}" `;
    const copy = document.createElement("button");
    copy.textContent = "copy request JSON";
    copy.addEventListener("click", () => {
      void navigator.clipboard.writeText(session.requestJson(index));
    });
    const show = document.createElement("button");
    show.textContent = "show";
    show.addEventListener("click", () => renderImages(entry.images));
    item.append(thumb, label, copy, show);
    list.appendChild(item);
  });
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const session = new Session();
  const pad = new SketchPad(el<HTMLCanvasElement>("sketch-canvas"));

  let imageSize = 32;
  try {
    const health = await api.health();
    imageSize = health.image_size;
    session.adoptDefaults(health.S_default, health.gamma_default);
    el<HTMLSpanElement>("model-id").textContent = health.model_id;
  } catch (err) {
    showError(`service unreachable: ${(err as Error).message}`);
    return;
  }

  const gammaSlider = el<HTMLInputElement>("gamma");
  gammaSlider.max = String(session.steps);
  gammaSlider.value = String(session.gamma);
  const gammaLabel = el<HTMLSpanElement>("gamma-label");
  const seedInput = el<HTMLInputElement>("seed");
  seedInput.value = String(session.seed);

  const syncGammaLabel = () => {
    gammaLabel.textContent = `${session.gamma} / ${session.steps} steps (${session.gammaPercent()}%)`;
  };
  syncGammaLabel();

  gammaSlider.addEventListener("input", () => {
    session.setGamma(Number(gammaSlider.value));
    syncGammaLabel();
  });
  el<HTMLInputElement>("prompt").addEventListener("input", (e) => {
    session.prompt = (e.target as HTMLInputElement).value;
  });
  seedInput.addEventListener("change", () => {
    session.seed = Number(seedInput.value) | 0;
  });
  el<HTMLButtonElement>("reroll").addEventListener("click", () => {
    seedInput.value = String(session.rerollSeed());
  });
  el<HTMLButtonElement>("clear").addEventListener("click", () => pad.clear());

  const run = async (spectrum?: number[]) => {
    clearError();
    if (strokeCount(pad.state) === 0 && !window.confirm("Canvas is empty; generate from a blank sketch?")) {
      return;
    }
    let sketchB64: string;
    try {
      sketchB64 = exportSketch(pad.state, imageSize);
    } catch (err) {
      showError(`sketch export failed: ${(err as Error).message}`);
      return;
    }
    if (!session.pinSeed) session.rerollSeed();
    const request = session.buildRequest(sketchB64, spectrum);
    const token = session.beginRequest();
    el<HTMLButtonElement>("generate").disabled = true;
    el<HTMLButtonElement>("spectrum").disabled = true;
    try {
      const response = await api.generate(request);
      if (session.applyResponse(token, request, response)) {
        renderImages(response.images);
        renderHistory(session);
      }
    } catch (err) {
      if (err instanceof ApiError) showError(`service error ${err.status}: ${err.message}`);
      else showError(`request failed: ${(err as Error).message}`);
    } finally {
      el<HTMLButtonElement>("generate").disabled = false;
      el<HTMLButtonElement>("spectrum").disabled = false;
    }
  };

  el<HTMLButtonElement>("generate").addEventListener("click", () => void run());
  el<HTMLButtonElement>("spectrum").addEventListener("click", () => void run(session.spectrumGrid(6)));
  el<HTMLInputElement>("pin-seed").addEventListener("change", (e) => {
    session.pinSeed = (e.target as HTMLInputElement).checked;
  });
}

void boot();
