/** DOM wiring: one image, one canvas, the accept/export workflow. */

import { BboxTool } from "./bboxTool.js";
import { InferenceClient } from "./client.js";
import { exportManifest } from "./exporter.js";
import { OverlayEditor } from "./overlay.js";
import { LoadedImage, SessionState } from "./session.js";
import { Bbox } from "./types.js";

export interface AppElements {
  canvas: HTMLCanvasElement;
  fileInput: HTMLInputElement;
  serverInput: HTMLInputElement;
  acceptButton: HTMLButtonElement;
  exportButton: HTMLButtonElement;
  status: HTMLElement;
}

export class AnnotatorApp {
  readonly session = new SessionState();
  readonly overlay = new OverlayEditor(this.session);
  readonly bboxTool: BboxTool;
  private client: InferenceClient;
  private bitmap: HTMLImageElement | null = null;
  zoom = 1;

  constructor(
    private readonly el: AppElements,
    fetchFn: typeof fetch = fetch,
  ) {
    this.client = new InferenceClient(el.serverInput.value || "http://127.0.0.1:8787", fetchFn);
    this.bboxTool = new BboxTool(
      () => (this.session.image ? { width: this.session.image.width, height: this.session.image.height } : null),
      (bbox) => void this.requestInference(bbox),
    );
    this.bindEvents(fetchFn);
  }

  private bindEvents(fetchFn: typeof fetch): void {
    this.el.serverInput.addEventListener("change", () => {
      this.client = new InferenceClient(this.el.serverInput.value, fetchFn);
    });
    this.el.fileInput.addEventListener("change", () => {
      const file = this.el.fileInput.files?.[0];
      if (file) {
        void this.loadFile(file);
      }
    });
    this.el.canvas.addEventListener("pointerdown", (ev) => this.onPointer("down", ev));
    this.el.canvas.addEventListener("pointermove", (ev) => this.onPointer("move", ev));
    this.el.canvas.addEventListener("pointerup", (ev) => this.onPointer("up", ev));
    this.el.acceptButton.addEventListener("click", () => {
      if (this.session.canAccept) {
        this.session.accept();
        this.setStatus(`accepted ${this.session.accepted.length} annotation(s)`);
        this.updateButtons();
      }
    });
    this.el.exportButton.addEventListener("click", () => this.downloadExport());
    this.updateButtons();
  }

  /** Map a pointer event into image pixel coordinates. */
  toImageCoords(ev: { clientX: number; clientY: number }): [number, number] {
    const rect = this.el.canvas.getBoundingClientRect();
    return [(ev.clientX - rect.left) / this.zoom, (ev.clientY - rect.top) / this.zoom];
  }

  private onPointer(kind: "down" | "move" | "up", ev: PointerEvent | MouseEvent): void {
    const [x, y] = this.toImageCoords(ev);
    if (kind === "down") {
      // grabbing a handle wins over starting a new bbox
      if (!this.overlay.pointerDown(x, y)) {
        this.bboxTool.pointerDown(x, y);
      }
    } else if (kind === "move") {
      if (!this.overlay.pointerMove(x, y)) {
        this.bboxTool.pointerMove(x, y);
      }
      this.draw();
    } else {
      this.overlay.pointerUp();
      this.bboxTool.pointerUp(x, y);
    }
    this.draw();
  }

  async loadFile(file: File): Promise<void> {
    const buf = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    buf.forEach((b) => (binary += String.fromCharCode(b)));
    const base64 = btoa(binary);
    await this.loadImageData(file.name, base64);
  }

  /** Load from base64 PNG bytes; size comes from the decoded element. */
  async loadImageData(name: string, base64: string, size?: { width: number; height: number }): Promise<void> {
    let width: number;
    let height: number;
    if (size) {
      width = size.width;
      height = size.height;
      this.bitmap = null;
    } else {
      const img = new Image();
      img.src = `data:image/png;base64,${base64}`;
      await img.decode();
      this.bitmap = img;
      width = img.naturalWidth;
      height = img.naturalHeight;
    }
    const loaded: LoadedImage = { name, width, height, base64 };
    this.session.loadImage(loaded);
    this.el.canvas.width = Math.round(width * this.zoom);
    this.el.canvas.height = Math.round(height * this.zoom);
    this.setStatus(`loaded ${name} (${width}x${height})`);
    this.updateButtons();
    this.draw();
  }

  async requestInference(bbox: Bbox): Promise<void> {
    if (!this.session.image) {
      return;
    }
    this.setStatus("inferring...");
    try {
      const sequenced = await this.client.infer(this.session.image.base64, bbox);
      if (sequenced === null) {
        return; // a newer gesture already rendered
      }
      this.session.applyResponse(bbox, sequenced.response);
      this.setStatus(
        `long ${this.session.longLength.toFixed(1)}px, short ${this.session.shortLength.toFixed(1)}px ` +
          `(model ${sequenced.response.model_version})`,
      );
    } catch (err) {
      this.setStatus(String(err));
    }
    this.updateButtons();
    this.draw();
  }

  downloadExport(): void {
    if (!this.session.canExport) {
      return;
    }
    const csv = exportManifest(this.session.accepted);
    const blob = new Blob([csv], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "annotations.csv";
    a.click();
    URL.revokeObjectURL(a.href);
  }

  draw(): void {
    const ctx = this.el.canvas.getContext("2d");
    if (!ctx) {
      return;
    }
    ctx.clearRect(0, 0, this.el.canvas.width, this.el.canvas.height);
    if (this.bitmap) {
      ctx.drawImage(this.bitmap, 0, 0, this.el.canvas.width, this.el.canvas.height);
    }
    const band = this.bboxTool.current;
    if (band) {
      ctx.strokeStyle = "#ffa500";
      ctx.setLineDash([4, 3]);
      ctx.strokeRect(band.x * this.zoom, band.y * this.zoom, band.w * this.zoom, band.h * this.zoom);
      ctx.setLineDash([]);
    }
    this.overlay.draw(ctx, this.zoom);
  }

  private setStatus(text: string): void {
    this.el.status.textContent = text;
  }

  private updateButtons(): void {
    this.el.acceptButton.disabled = !this.session.canAccept;
    this.el.exportButton.disabled = !this.session.canExport;
  }
}

export function mount(root: Document = document): AnnotatorApp {
  const el: AppElements = {
    canvas: root.getElementById("slice") as HTMLCanvasElement,
    fileInput: root.getElementById("file") as HTMLInputElement,
    serverInput: root.getElementById("server") as HTMLInputElement,
    acceptButton: root.getElementById("accept") as HTMLButtonElement,
    exportButton: root.getElementById("export") as HTMLButtonElement,
    status: root.getElementById("status") as HTMLElement,
  };
  return new AnnotatorApp(el);
}
