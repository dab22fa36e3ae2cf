/** Explorer wiring: upload an LR image, drive the scale/T sliders, watch
 * the reconstruction refine component by component.
 *
 * All numbers shown come from service responses; the client computes only
 * pixel diffs (heatmap) and layout. A request-generation counter makes
 * sure a stale stream can never paint over a newer one.
 */

import { ApiError, ServiceClient } from "./api.js";
import { diffHeatmap } from "./heatmap.js";
import {
  PsnrSeries,
  RequestGate,
  debounce,
  formatPsnr,
  outputDims,
  validateUpload,
} from "./state.js";
import type { FrameEvent, ModelMeta } from "./types.js";

const DEBOUNCE_MS = 250;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

interface Session {
  imageB64: string;
  width: number;
  height: number;
  sessionId: string;
  referenceB64: string | null;
  frames: Map<number, ImageData>;
}

class Explorer {
  private client = new ServiceClient("");
  private meta: ModelMeta | null = null;
  private session: Session | null = null;
  private gate = new RequestGate();
  private controller: AbortController | null = null;
  private psnrSeries = new PsnrSeries();
  private baselineCache = new Map<string, string>();

  private banner = el<HTMLDivElement>("banner");
  private fileInput = el<HTMLInputElement>("file");
  private refInput = el<HTMLInputElement>("reference");
  private scaleSlider = el<HTMLInputElement>("scale");
  private tSlider = el<HTMLInputElement>("tvalue");
  private streamToggle = el<HTMLInputElement>("streaming");
  private zoomSlider = el<HTMLInputElement>("zoom");
  private heatT = el<HTMLInputElement>("heat-t");
  private scaleLabel = el<HTMLSpanElement>("scale-label");
  private tLabel = el<HTMLSpanElement>("t-label");
  private dimsLabel = el<HTMLSpanElement>("dims-label");
  private statusLine = el<HTMLDivElement>("status");
  private modelLine = el<HTMLDivElement>("model-line");
  private baseCanvas = el<HTMLCanvasElement>("pane-baseline");
  private srCanvas = el<HTMLCanvasElement>("pane-sr");
  private heatCanvas = el<HTMLCanvasElement>("pane-heat");
  private sparkCanvas = el<HTMLCanvasElement>("sparkline");

  private rerun = debounce(() => void this.run(), DEBOUNCE_MS);

  async start(): Promise<void> {
    try {
      this.meta = await this.client.modelMeta();
      this.modelLine.textContent =
        `model: ${this.meta.head_kind}, T_max ${this.meta.T_max}, ` +
        `${this.meta.pe_variant} PE, checkpoint ${this.meta.checkpoint_digest.slice(0, 12)}`;
      this.tSlider.max = String(2 * this.meta.T_max);
      this.tSlider.value = String(Math.max(1, Math.floor(this.meta.T_max / 2)));
    } catch (err) {
      this.showError(`service unavailable: ${(err as Error).message}`);
    }
    this.fileInput.addEventListener("change", () => void this.onUpload());
    this.refInput.addEventListener("change", () => void this.onReference());
    for (const slider of [this.scaleSlider, this.tSlider]) {
      slider.addEventListener("input", () => {
        this.updateLabels();
        this.rerun();
      });
    }
    this.streamToggle.addEventListener("change", () => this.rerun());
    this.zoomSlider.addEventListener("input", () => this.applyZoom());
    this.heatT.addEventListener("input", () => this.renderHeatmap());
    this.updateLabels();
  }

  private showError(message: string): void {
    this.banner.textContent = message;
    this.banner.hidden = false;
  }

  private clearError(): void {
    this.banner.hidden = true;
  }

  private get scale(): number {
    return Number(this.scaleSlider.value);
  }

  private get tCount(): number {
    return Number(this.tSlider.value);
  }

  private updateLabels(): void {
    this.scaleLabel.textContent = `x${this.scale.toFixed(1)}`;
    this.tLabel.textContent = String(this.tCount);
    if (this.session) {
      const { width, height } = outputDims(
        this.session.width,
        this.session.height,
        this.scale,
        this.scale,
      );
      this.dimsLabel.textContent = `output ${height}x${width}`;
    }
  }

  private async decodeUpload(file: File): Promise<{ b64: string; w: number; h: number }> {
    const buf = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    for (const byte of buf) {
      binary += String.fromCharCode(byte);
    }
    const b64 = btoa(binary);
    const bitmap = await createImageBitmap(file);
    return { b64, w: bitmap.width, h: bitmap.height };
  }

  private async onUpload(): Promise<void> {
    const file = this.fileInput.files?.[0];
    if (!file || !this.meta) {
      return;
    }
    this.clearError();
    const { b64, w, h } = await this.decodeUpload(file);
    const problem = validateUpload(w, h, this.meta.max_pixels, file.type);
    if (problem) {
      this.showError(problem);
      return;
    }
    this.session = {
      imageB64: b64,
      width: w,
      height: h,
      sessionId: crypto.randomUUID(),
      referenceB64: null,
      frames: new Map(),
    };
    this.psnrSeries.clear();
    this.baselineCache.clear();
    this.scaleSlider.disabled = false;
    this.tSlider.disabled = false;
    this.scaleSlider.value = "2.0";
    this.tSlider.value = String(Math.max(1, Math.floor(this.meta.T_max / 2)));
    this.updateLabels();
    void this.run();
  }

  private async onReference(): Promise<void> {
    const file = this.refInput.files?.[0];
    if (!file || !this.session) {
      return;
    }
    const { b64 } = await this.decodeUpload(file);
    this.session.referenceB64 = b64;
    this.psnrSeries.clear();
    this.rerun();
  }

  private async drawB64(canvas: HTMLCanvasElement, b64: string): Promise<ImageData> {
    const resp = await fetch(`data:image/png;base64,${b64}`);
    const bitmap = await createImageBitmap(await resp.blob());
    canvas.width = bitmap.width;
    canvas.height = bitmap.height;
    const ctx = canvas.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0);
    this.applyZoom();
    return ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  }

  private applyZoom(): void {
    const zoom = Number(this.zoomSlider.value);
    for (const canvas of [this.baseCanvas, this.srCanvas, this.heatCanvas]) {
      if (canvas.width > 0) {
        canvas.style.width = `${canvas.width * zoom}px`;
      }
    }
  }

  private async refreshBaseline(gen: number): Promise<void> {
    if (!this.session) {
      return;
    }
    const key = this.scale.toFixed(3);
    let b64 = this.baselineCache.get(key);
    if (!b64) {
      const resp = await this.client.infer({
        image: this.session.imageB64,
        s_x: this.scale,
        s_y: this.scale,
        T: 0,
        session_id: this.session.sessionId,
      });
      b64 = resp.image;
      this.baselineCache.set(key, b64);
    }
    if (this.gate.isCurrent(gen)) {
      await this.drawB64(this.baseCanvas, b64);
    }
  }

  private async run(): Promise<void> {
    if (!this.session) {
      return;
    }
    this.clearError();
    const gen = this.gate.begin();
    this.controller?.abort();
    this.controller = new AbortController();
    this.session.frames.clear();
    const req = {
      image: this.session.imageB64,
      s_x: this.scale,
      s_y: this.scale,
      T: this.tCount,
      session_id: this.session.sessionId,
      reference: this.session.referenceB64 ?? undefined,
    };
    void this.refreshBaseline(gen);
    try {
      if (this.streamToggle.checked) {
        const done = await this.client.stream(
          req,
          (frame) => void this.onFrame(gen, frame),
          this.controller.signal,
        );
        if (done && this.gate.isCurrent(gen)) {
          this.statusLine.textContent =
            `T=${done.T}, ${done.frames} frames, ${done.elapsed_ms.toFixed(0)} ms total`;
        }
      } else {
        const resp = await this.client.infer(req);
        if (this.gate.isCurrent(gen)) {
          await this.drawB64(this.srCanvas, resp.image);
          this.statusLine.textContent = `T=${resp.T}, ${resp.elapsed_ms.toFixed(0)} ms`;
        }
      }
    } catch (err) {
      if ((err as Error).name === "AbortError") {
        return; // superseded by a newer request
      }
      const detail = err instanceof ApiError ? `${err.status}: ${err.message}` : String(err);
      this.showError(`request failed (${detail}); adjust sliders to retry`);
    }
  }

  private async onFrame(gen: number, frame: FrameEvent): Promise<void> {
    if (!this.gate.isCurrent(gen) || !this.session) {
      return; // stale frame: a newer request already resolved
    }
    const imageData = await this.drawB64(this.srCanvas, frame.image);
    this.session.frames.set(frame.t, imageData);
    const psnrText = frame.psnr !== undefined ? `, PSNR ${formatPsnr(frame.psnr)}` : "";
    this.statusLine.textContent =
      `component ${frame.t}/${this.tCount}, ${frame.elapsed_ms.toFixed(0)} ms${psnrText}`;
    if (frame.psnr !== undefined && frame.psnr !== null && frame.t === this.tCount) {
      this.psnrSeries.record(frame.t, frame.psnr);
      this.renderSparkline();
    }
    this.heatT.max = String(frame.t);
    if (Number(this.heatT.value) >= frame.t - 1) {
      this.heatT.value = String(frame.t);
      this.renderHeatmap();
    }
  }

  private renderHeatmap(): void {
    if (!this.session) {
      return;
    }
    const t = Number(this.heatT.value);
    const cur = this.session.frames.get(t);
    const prev = this.session.frames.get(t - 1) ?? (t === 1 ? cur : undefined);
    if (!cur) {
      return;
    }
    const base = t === 1 ? new Uint8ClampedArray(cur.data.length) : prev?.data;
    if (!base) {
      return;
    }
    const heat = diffHeatmap(cur.data, base);
    this.heatCanvas.width = cur.width;
    this.heatCanvas.height = cur.height;
    const ctx = this.heatCanvas.getContext("2d")!;
    const imageData = ctx.createImageData(cur.width, cur.height);
    imageData.data.set(heat);
    ctx.putImageData(imageData, 0, 0);
    this.applyZoom();
  }

  private renderSparkline(): void {
    const ctx = this.sparkCanvas.getContext("2d")!;
    const { width, height } = this.sparkCanvas;
    ctx.clearRect(0, 0, width, height);
    const pts = this.psnrSeries.sorted();
    if (pts.length === 0) {
      return;
    }
    const ts = pts.map(([t]) => t);
    const vals = pts.map(([, v]) => v);
    const tMax = Math.max(...ts, 1);
    const lo = Math.min(...vals);
    const hi = Math.max(...vals);
    const span = Math.max(hi - lo, 0.1);
    ctx.strokeStyle = "#4caf50";
    ctx.fillStyle = "#4caf50";
    ctx.beginPath();
    pts.forEach(([t, v], i) => {
      const x = (t / tMax) * (width - 8) + 4;
      const y = height - 4 - ((v - lo) / span) * (height - 8);
      if (i === 0) {
        ctx.moveTo(x, y);
      } else {
        ctx.lineTo(x, y);
      }
      ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
    });
    ctx.stroke();
  }
}

new Explorer().start();
