// The session loop: subscribe to server events, fetch the pending frame when
// labels are awaited, let the operator assign classes, submit, repeat. All
// rendering goes through the injected view so the loop runs headlessly too.

import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import { AssignmentStore } from "./assignment.js";
import { MetricSeries } from "./chart.js";
import type { FramePayload, MetricsSnapshot, SessionState } from "./types.js";

export interface ConsoleView {
  showState(state: SessionState): void;
  showFrame(frame: FramePayload, assignment: AssignmentStore): void;
  refreshAssignment(assignment: AssignmentStore): void;
  showMetrics(snapshot: MetricsSnapshot, miouSeries: MetricSeries): void;
  showError(message: string): void;
  clearError(): void;
  showFinished(finalMiou: number | null): void;
}

export class ConsoleController {
  assignment: AssignmentStore | null = null;
  frame: FramePayload | null = null;
  state: SessionState | null = null;
  readonly miouSeries = new MetricSeries();
  submitting = false;
  finished = false;
  private lastSeq = -1;
  private stopped = false;

  constructor(
    private readonly api: ApiClient,
    private readonly view: ConsoleView,
    private readonly backoffMs = 500
  ) {}

  /** Main loop: event stream with reconnect; falls back to polling. */
  async run(): Promise<void> {
    while (!this.stopped && !this.finished) {
      try {
        await this.api.streamEvents((event) => {
          void this.onState(event);
        });
      } catch {
        // stream dropped: re-sync idempotently from the state endpoint
        try {
          await this.onState(await this.api.getSession());
        } catch {
          /* service unreachable: retry after backoff */
        }
      }
      if (!this.finished && !this.stopped) {
        await sleep(this.backoffMs);
      }
    }
  }

  stop(): void {
    this.stopped = true;
  }

  async onState(state: SessionState): Promise<void> {
    if (state.seq < this.lastSeq) return; // stale replay after reconnect
    this.lastSeq = state.seq;
    this.state = state;
    this.view.showState(state);

    if (state.phase === "awaiting_labels") {
      if (!this.frame || this.frame.frame_id !== state.frame_id) {
        await this.fetchFrame();
      }
    } else if (state.phase === "adapting" || state.phase === "finished") {
      this.frame = null;
      this.assignment = null;
      await this.refreshMetrics();
      if (state.phase === "finished") {
        this.finished = true;
        this.view.showFinished(this.miouSeries.latest);
      }
    } else if (state.phase === "failed") {
      this.finished = true;
      this.view.showError(state.error ?? "session failed");
    }
  }

  private async fetchFrame(): Promise<void> {
    try {
      const frame = await this.api.getFrame();
      this.frame = frame;
      this.assignment = new AssignmentStore(frame);
      this.view.clearError();
      this.view.showFrame(frame, this.assignment);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        return; // the frame moved on; the next event will re-sync us
      }
      this.view.showError(String(err));
    }
  }

  private async refreshMetrics(): Promise<void> {
    try {
      const snapshot = await this.api.getMetrics();
      this.miouSeries.push(snapshot.frames_done, snapshot.miou_cum);
      this.view.showMetrics(snapshot, this.miouSeries);
    } catch {
      /* metrics are cosmetic; ignore transient errors */
    }
  }

  /** Keyboard entry point: digits assign, Tab cycles, Enter submits. */
  async handleKey(key: string, shift = false): Promise<void> {
    if (!this.assignment || this.submitting) return;
    if (key === "Tab") {
      this.assignment.cycle(shift ? -1 : 1);
      this.view.refreshAssignment(this.assignment);
    } else if (key === "Enter") {
      await this.submit();
    } else if (/^[0-9]$/.test(key)) {
      if (this.assignment.assignActive(parseInt(key, 10))) {
        this.view.refreshAssignment(this.assignment);
      }
    }
  }

  selectMarker(index: number): void {
    if (!this.assignment) return;
    this.assignment.focus(index);
    this.view.refreshAssignment(this.assignment);
  }

  async submit(): Promise<void> {
    if (!this.assignment || !this.frame || !this.assignment.isComplete()) {
      return;
    }
    this.submitting = true;
    try {
      await this.api.postLabels({
        frame_id: this.frame.frame_id,
        labels: this.assignment.toLabels(),
      });
      this.view.clearError();
    } catch (err) {
      if (err instanceof ApiError && (err.status === 409 || err.status === 422)) {
        // surface verbatim and re-sync; the assignment stays for correction
        this.view.showError(err.message);
        try {
          await this.onState(await this.api.getSession());
        } catch {
          /* next event re-syncs */
        }
      } else {
        this.view.showError(String(err));
      }
    } finally {
      this.submitting = false;
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
