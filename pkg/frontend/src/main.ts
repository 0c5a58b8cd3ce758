// Browser bootstrap: wire the API client, controller and DOM view together.

import { ApiClient } from "./api.js";
import { ConsoleController } from "./controller.js";
import { DomView } from "./view.js";

export function bootstrap(doc: Document, baseUrl = ""): ConsoleController {
  const api = new ApiClient(baseUrl);
  const view = new DomView(
    doc,
    (classId) => void controller.handleKey(String(classId)),
    (index) => controller.selectMarker(index),
    () => void controller.submit()
  );
  const controller = new ConsoleController(api, view);

  doc.addEventListener("keydown", (event) => {
    const kev = event as KeyboardEvent;
    if (kev.key === "Tab") kev.preventDefault();
    void controller.handleKey(kev.key, kev.shiftKey);
  });

  void controller.run();
  return controller;
}

declare const window: (Window & typeof globalThis) | undefined;

if (typeof window !== "undefined" && typeof document !== "undefined") {
  bootstrap(document);
}
