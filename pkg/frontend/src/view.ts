// DOM rendering. Every canvas operation is optional-chained so the view also
// works under a headless DOM without a 2D context (tests assert on text and
// element state instead of pixels).

import { AssignmentStore } from "./assignment.js";
import { MetricSeries, toPolyline } from "./chart.js";
import { lensCells, lensSize } from "./lens.js";
import type { ConsoleView } from "./controller.js";
import type { FramePayload, MetricsSnapshot, SessionState } from "./types.js";

const FRAME_SCALE = 8;
const LENS_RADIUS = 4;
const LENS_SCALE = 16;

export class DomView implements ConsoleView {
  private readonly phaseEl: HTMLElement;
  private readonly progressEl: HTMLElement;
  private readonly errorEl: HTMLElement;
  private readonly miouEl: HTMLElement;
  private readonly finalEl: HTMLElement;
  private readonly paletteEl: HTMLElement;
  private readonly markerListEl: HTMLElement;
  private readonly submitBtn: HTMLButtonElement;
  private readonly frameCanvas: HTMLCanvasElement;
  private readonly lensCanvas: HTMLCanvasElement;
  private readonly chartCanvas: HTMLCanvasElement;
  private image: HTMLImageElement | null = null;
  private frame: FramePayload | null = null;

  constructor(
    private readonly doc: Document,
    private readonly onAssign: (classId: number) => void,
    private readonly onSelectMarker: (index: number) => void,
    private readonly onSubmit: () => void
  ) {
    const byId = (id: string) => {
      const el = doc.getElementById(id);
      if (!el) throw new Error(`missing element #${id}`);
      return el;
    };
    this.phaseEl = byId("phase");
    this.progressEl = byId("progress");
    this.errorEl = byId("error");
    this.miouEl = byId("miou");
    this.finalEl = byId("final");
    this.paletteEl = byId("palette");
    this.markerListEl = byId("markers");
    this.submitBtn = byId("submit") as HTMLButtonElement;
    this.frameCanvas = byId("frame") as HTMLCanvasElement;
    this.lensCanvas = byId("lens") as HTMLCanvasElement;
    this.chartCanvas = byId("chart") as HTMLCanvasElement;
    this.submitBtn.addEventListener("click", () => this.onSubmit());
  }

  showState(state: SessionState): void {
    this.phaseEl.textContent = state.phase;
    this.progressEl.textContent = `${state.frames_done} / ${state.total_frames}`;
  }

  showFrame(frame: FramePayload, assignment: AssignmentStore): void {
    this.frame = frame;
    this.renderPalette(frame);
    this.image = this.doc.createElement("img") as HTMLImageElement;
    this.image.onload = () => this.redraw(assignment);
    this.image.src = `data:image/png;base64,${frame.png_base64}`;
    this.refreshAssignment(assignment);
  }

  refreshAssignment(assignment: AssignmentStore): void {
    this.submitBtn.disabled = !assignment.isComplete();
    this.renderMarkerList(assignment);
    this.redraw(assignment);
  }

  showMetrics(snapshot: MetricsSnapshot, series: MetricSeries): void {
    if (snapshot.miou_cum !== null) {
      this.miouEl.textContent = snapshot.miou_cum.toFixed(4);
    }
    this.drawChart(series);
  }

  showError(message: string): void {
    this.errorEl.textContent = message;
    (this.errorEl as HTMLElement).style.display = "block";
  }

  clearError(): void {
    this.errorEl.textContent = "";
    (this.errorEl as HTMLElement).style.display = "none";
  }

  showFinished(finalMiou: number | null): void {
    this.finalEl.textContent =
      finalMiou === null ? "finished" : `finished, final mIoU ${finalMiou.toFixed(4)}`;
    this.submitBtn.disabled = true;
  }

  // -- internals -----------------------------------------------------------

  private renderPalette(frame: FramePayload): void {
    this.paletteEl.textContent = "";
    for (const entry of frame.palette) {
      const btn = this.doc.createElement("button");
      btn.className = "palette-btn";
      btn.textContent = `${entry.id}: ${entry.name}`;
      (btn as HTMLElement).style.borderColor = entry.color;
      btn.addEventListener("click", () => this.onAssign(entry.id));
      this.paletteEl.appendChild(btn);
    }
  }

  private renderMarkerList(assignment: AssignmentStore): void {
    this.markerListEl.textContent = "";
    assignment.markers.forEach(([r, c], i) => {
      const li = this.doc.createElement("li");
      const cls = assignment.classAt(r, c);
      li.textContent =
        `(${r}, ${c}) ` + (cls === undefined ? "unassigned" : `class ${cls}`);
      if (i === assignment.activeIndex) li.className = "active";
      li.addEventListener("click", () => this.onSelectMarker(i));
      this.markerListEl.appendChild(li);
    });
  }

  private redraw(assignment: AssignmentStore): void {
    const frame = this.frame;
    if (!frame) return;
    const ctx = this.frameCanvas.getContext?.("2d") ?? null;
    if (ctx && this.image) {
      this.frameCanvas.width = frame.width * FRAME_SCALE;
      this.frameCanvas.height = frame.height * FRAME_SCALE;
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(
        this.image,
        0,
        0,
        frame.width * FRAME_SCALE,
        frame.height * FRAME_SCALE
      );
      assignment.markers.forEach(([r, c], i) => {
        const assigned = assignment.classAt(r, c) !== undefined;
        ctx.lineWidth = i === assignment.activeIndex ? 3 : 1;
        ctx.strokeStyle = assigned ? "#2ecc71" : "#ff3333";
        ctx.strokeRect(c * FRAME_SCALE - 2, r * FRAME_SCALE - 2,
                       FRAME_SCALE + 4, FRAME_SCALE + 4);
      });
    }
    this.drawLens(assignment);
  }

  private drawLens(assignment: AssignmentStore): void {
    const frame = this.frame;
    const marker = assignment.activeMarker;
    const ctx = this.lensCanvas.getContext?.("2d") ?? null;
    if (!frame || !marker || !ctx || !this.image) return;
    const spec = {
      row: marker[0],
      col: marker[1],
      radius: LENS_RADIUS,
      scale: LENS_SCALE,
    };
    const size = lensSize(spec);
    this.lensCanvas.width = size;
    this.lensCanvas.height = size;
    ctx.imageSmoothingEnabled = false;
    ctx.fillStyle = "#000";
    ctx.fillRect(0, 0, size, size);
    for (const cell of lensCells(spec, frame.height, frame.width)) {
      // one source pixel per cell: the labeled pixel is never resampled
      ctx.drawImage(
        this.image,
        cell.srcCol,
        cell.srcRow,
        1,
        1,
        cell.dx,
        cell.dy,
        cell.size,
        cell.size
      );
      if (cell.isCenter) {
        ctx.strokeStyle = "#ffffff";
        ctx.lineWidth = 2;
        ctx.strokeRect(cell.dx, cell.dy, cell.size, cell.size);
      }
    }
  }

  private drawChart(series: MetricSeries): void {
    const ctx = this.chartCanvas.getContext?.("2d") ?? null;
    if (!ctx) return;
    const w = this.chartCanvas.width;
    const h = this.chartCanvas.height;
    ctx.clearRect(0, 0, w, h);
    const line = toPolyline(series, w, h);
    if (line.length < 2) return;
    ctx.strokeStyle = "#4aa3ff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(line[0][0], line[0][1]);
    for (const [x, y] of line.slice(1)) ctx.lineTo(x, y);
    ctx.stroke();
  }
}
