// Append-only metric series and the pure polyline math behind the live chart.

export interface SeriesPoint {
  frame: number;
  value: number;
}

export class MetricSeries {
  readonly points: SeriesPoint[] = [];
  private lastFrame = -1;

  /** Strictly append-only: snapshots for already-seen frames are ignored. */
  push(frame: number, value: number | null): void {
    if (value === null || !Number.isFinite(value)) return;
    if (frame <= this.lastFrame) return;
    this.points.push({ frame, value });
    this.lastFrame = frame;
  }

  get latest(): number | null {
    return this.points.length
      ? this.points[this.points.length - 1].value
      : null;
  }
}

/** Scale a series into canvas coordinates (y grows downward). */
export function toPolyline(
  series: MetricSeries,
  width: number,
  height: number,
  yMin = 0,
  yMax = 1
): [number, number][] {
  const pts = series.points;
  if (pts.length === 0) return [];
  const xMax = Math.max(pts[pts.length - 1].frame, 1);
  return pts.map((p) => [
    (p.frame / xMax) * (width - 1),
    (1 - (p.value - yMin) / (yMax - yMin)) * (height - 1),
  ]);
}
