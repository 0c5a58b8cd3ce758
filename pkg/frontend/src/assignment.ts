// Assignment state for one pending label query: which class the operator has
// given each queried pixel, and which marker currently has keyboard focus.

import type { FramePayload, LabelEntry } from "./types.js";

const keyOf = (row: number, col: number) => `${row}:${col}`;

export class AssignmentStore {
  readonly markers: [number, number][];
  private readonly classes = new Map<string, number>();
  private readonly numClasses: number;
  private active = 0;

  constructor(frame: FramePayload) {
    this.markers = frame.pending.map(([r, c]) => [r, c]);
    this.numClasses = frame.palette.length;
  }

  get activeIndex(): number {
    return this.active;
  }

  get activeMarker(): [number, number] | null {
    return this.markers[this.active] ?? null;
  }

  classAt(row: number, col: number): number | undefined {
    return this.classes.get(keyOf(row, col));
  }

  /** Assign a class to the active marker and advance to the next unassigned one. */
  assignActive(classId: number): boolean {
    const marker = this.activeMarker;
    if (!marker || classId < 0 || classId >= this.numClasses) return false;
    this.classes.set(keyOf(marker[0], marker[1]), classId);
    this.advanceToUnassigned();
    return true;
  }

  cycle(delta: number): void {
    const n = this.markers.length;
    if (n === 0) return;
    this.active = (this.active + delta + n) % n;
  }

  focus(index: number): void {
    if (index >= 0 && index < this.markers.length) this.active = index;
  }

  private advanceToUnassigned(): void {
    const n = this.markers.length;
    for (let step = 1; step <= n; step++) {
      const idx = (this.active + step) % n;
      const [r, c] = this.markers[idx];
      if (!this.classes.has(keyOf(r, c))) {
        this.active = idx;
        return;
      }
    }
    this.cycle(1); // everything assigned: just move on
  }

  get assignedCount(): number {
    return this.classes.size;
  }

  /** Submit is allowed only when every queried pixel has a class. */
  isComplete(): boolean {
    return this.classes.size === this.markers.length && this.markers.length > 0;
  }

  /**
   * The POST body: exactly the pending coordinates (a permutation of the
   * query set), never fabricated ones.
   */
  toLabels(): LabelEntry[] {
    if (!this.isComplete()) {
      throw new Error("assignment incomplete");
    }
    return this.markers.map(([row, col]) => ({
      row,
      col,
      class_id: this.classes.get(keyOf(row, col))!,
    }));
  }
}
