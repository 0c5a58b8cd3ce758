// Payload shapes of the session service API.

export type Phase =
  | "starting"
  | "awaiting_labels"
  | "adapting"
  | "finished"
  | "failed";

export interface SessionState {
  session_id: string;
  phase: Phase;
  seq: number;
  frame_id: number | null;
  frames_done: number;
  total_frames: number;
  error: string | null;
}

export interface PaletteEntry {
  id: number;
  name: string;
  color: string; // "#rrggbb"
}

export interface FramePayload {
  frame_id: number;
  height: number;
  width: number;
  png_base64: string;
  pending: [number, number][]; // [row, col] in query order
  palette: PaletteEntry[];
}

export interface LossSnapshot {
  ce: number;
  ce_aug: number;
  ent: number;
  cst: number;
  total: number;
}

export interface MetricsSnapshot {
  frames_done: number;
  total_frames: number;
  phase: Phase;
  miou_cum: number | null;
  miou_domain: number | null;
  domain: number | null;
  losses: LossSnapshot | null;
  summary?: Record<string, unknown>;
}

export interface LabelEntry {
  row: number;
  col: number;
  class_id: number;
}

export interface LabelSubmission {
  frame_id: number;
  labels: LabelEntry[];
}
