import { describe, expect, it } from "vitest";

import { AssignmentStore } from "../src/assignment.js";
import type { FramePayload } from "../src/types.js";

const frame: FramePayload = {
  frame_id: 0,
  height: 6,
  width: 6,
  png_base64: "",
  pending: [
    [1, 2],
    [4, 4],
    [0, 5],
  ],
  palette: [
    { id: 0, name: "background", color: "#000" },
    { id: 1, name: "a", color: "#111" },
    { id: 2, name: "b", color: "#222" },
  ],
};

describe("AssignmentStore", () => {
  it("enables submit only when every marker is assigned", () => {
    const store = new AssignmentStore(frame);
    expect(store.isComplete()).toBe(false);
    store.assignActive(1);
    store.assignActive(2);
    expect(store.isComplete()).toBe(false);
    store.assignActive(0);
    expect(store.isComplete()).toBe(true);
  });

  it("rejects classes outside the palette", () => {
    const store = new AssignmentStore(frame);
    expect(store.assignActive(3)).toBe(false);
    expect(store.assignActive(-1)).toBe(false);
    expect(store.assignedCount).toBe(0);
  });

  it("produces labels as an exact permutation of the pending set", () => {
    const store = new AssignmentStore(frame);
    store.focus(2);
    store.assignActive(2);
    store.assignActive(0);
    store.assignActive(1);
    const labels = store.toLabels();
    const coords = labels.map((l) => [l.row, l.col]);
    expect(coords).toEqual(frame.pending);
    expect(store.classAt(0, 5)).toBe(2);
  });

  it("throws when converting an incomplete assignment", () => {
    const store = new AssignmentStore(frame);
    store.assignActive(1);
    expect(() => store.toLabels()).toThrow();
  });

  it("advances focus to the next unassigned marker after assigning", () => {
    const store = new AssignmentStore(frame);
    expect(store.activeIndex).toBe(0);
    store.assignActive(0);
    expect(store.activeIndex).toBe(1);
    store.cycle(1);
    expect(store.activeIndex).toBe(2);
    store.cycle(1);
    expect(store.activeIndex).toBe(0);
    store.cycle(-1);
    expect(store.activeIndex).toBe(2);
  });
});
