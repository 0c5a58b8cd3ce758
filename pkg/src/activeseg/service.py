"""HTTP session service hosting the human-in-the-loop oracle.

One service process runs one adaptation session. The adaptation loop runs in
a worker thread; whenever the annotator has picked pixels, the session parks
in ``awaiting_labels`` with a pending query until a label submission covering
exactly the queried coordinates arrives (or the per-frame timeout fires, in
which case the frame is evaluated but not adapted). HTTP handlers only read
immutable snapshots and feed the single answer queue, so all session
mutation stays on the worker thread.

Endpoints:
  GET  /api/session   phase + progress
  GET  /api/frame     pending query: PNG image (base64), coordinates, palette
  POST /api/labels    submit {frame_id, labels: [{row, col, class_id}]}
  GET  /api/metrics   running summary snapshot
  GET  /api/events    server-sent events on every phase change
"""

from __future__ import annotations

import base64
import io
import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, StreamingResponse
from PIL import Image

from . import runner
from .adapter import Oracle
from .config import ExperimentConfig
from .errors import OracleTimeout
from .streamlab import class_palette

PHASE_STARTING = "starting"
PHASE_AWAITING = "awaiting_labels"
PHASE_ADAPTING = "adapting"
PHASE_FINISHED = "finished"
PHASE_FAILED = "failed"

CLASS_NAMES_5 = ["background", "crimson", "moss", "teal", "plum"]


def _palette_doc(num_classes: int) -> list:
    colors = class_palette(num_classes)
    names = CLASS_NAMES_5 if num_classes == 5 else \
        ["background"] + [f"class_{c}" for c in range(1, num_classes)]
    return [{"id": c, "name": names[c],
             "color": "#%02x%02x%02x" % tuple(int(round(v * 255)) for v in colors[c])}
            for c in range(num_classes)]


def _png_base64(image: np.ndarray) -> str:
    u8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@dataclass
class PendingQuery:
    frame_id: int
    coords: list              # [(row, col)] in query order
    png_base64: str
    height: int
    width: int


class SessionController:
    """Owns the session state machine and the event fan-out."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.session_id = uuid.uuid4().hex[:12]
        self.num_classes = config.stream.num_classes
        self.total_frames = config.stream.to_stream_spec(config.seeds[0]).total_frames
        self.palette = _palette_doc(self.num_classes)
        self._lock = threading.Lock()
        self._phase = PHASE_STARTING
        self._pending: PendingQuery | None = None
        self._answers: queue.Queue = queue.Queue(maxsize=1)
        self._subscribers: list[queue.Queue] = []
        self._seq = 0
        self._metrics = {"frames_done": 0, "miou_cum": None, "miou_domain": None,
                         "domain": None, "losses": None}
        self._summary = None
        self._error = None
        self._thread: threading.Thread | None = None

    # -- state transitions (worker thread) ---------------------------------

    def _broadcast(self, extra=None):
        event = self.session_state()
        if extra:
            event.update(extra)
        for q in list(self._subscribers):
            try:
                q.put_nowait(event)
            except queue.Full:  # slow client: drop, it will re-sync from state
                pass

    def _set_phase(self, phase, pending=None):
        with self._lock:
            self._phase = phase
            self._pending = pending
            self._seq += 1
        self._broadcast()

    def await_labels(self, pending: PendingQuery) -> list:
        """Park in awaiting_labels until a valid submission or timeout."""
        while True:  # drain any stale submission left from a timed-out frame
            try:
                self._answers.get_nowait()
            except queue.Empty:
                break
        self._set_phase(PHASE_AWAITING, pending)
        try:
            classes = self._answers.get(timeout=self.config.oracle_timeout)
        except queue.Empty:
            self._set_phase(PHASE_ADAPTING)
            raise OracleTimeout(
                f"no labels within {self.config.oracle_timeout}s")
        self._set_phase(PHASE_ADAPTING)
        return classes

    def on_record(self, record):
        with self._lock:
            self._metrics = {
                "frames_done": record.frame_id + 1,
                "miou_cum": record.miou_cum,
                "miou_domain": record.miou_domain,
                "domain": record.domain_id,
                "losses": {"ce": record.losses.ce, "ce_aug": record.losses.ce_aug,
                           "ent": record.losses.ent, "cst": record.losses.cst,
                           "total": record.losses.total},
            }

    # -- worker ------------------------------------------------------------

    def start(self):
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def join(self, timeout=None):
        if self._thread is not None:
            self._thread.join(timeout)

    def _run(self):
        try:
            from pathlib import Path

            config = self.config
            seed = config.seeds[0]
            source_net = runner.load_or_pretrain_source(config)
            self._set_phase(PHASE_ADAPTING)
            oracle = HumanOracle(self)
            result = runner.execute_seed(config, source_net, seed,
                                         oracle=oracle, on_record=self.on_record)
            run_dir = Path(config.output_dir)
            run_dir.mkdir(parents=True, exist_ok=True)
            from .config import save_config

            save_config(run_dir / "config.json", config)
            runner.write_seed_artifacts(run_dir / f"seed_{seed}", result)
            with self._lock:
                self._summary = result["summary"]
            self._set_phase(PHASE_FINISHED)
        except Exception as exc:  # surfaced through /api/session
            with self._lock:
                self._error = f"{type(exc).__name__}: {exc}"
            self._set_phase(PHASE_FAILED)

    # -- snapshots (request threads) ----------------------------------------

    def session_state(self) -> dict:
        with self._lock:
            return {
                "session_id": self.session_id,
                "phase": self._phase,
                "seq": self._seq,
                "frame_id": self._pending.frame_id if self._pending else None,
                "frames_done": self._metrics["frames_done"],
                "total_frames": self.total_frames,
                "error": self._error,
            }

    def frame_payload(self):
        with self._lock:
            if self._phase != PHASE_AWAITING or self._pending is None:
                return None
            p = self._pending
            return {
                "frame_id": p.frame_id,
                "height": p.height,
                "width": p.width,
                "png_base64": p.png_base64,
                "pending": [[r, c] for r, c in p.coords],
                "palette": self.palette,
            }

    def metrics_snapshot(self) -> dict:
        with self._lock:
            out = dict(self._metrics)
            out["total_frames"] = self.total_frames
            out["phase"] = self._phase
            if self._summary is not None:
                out["summary"] = self._summary
            return out

    def submit_labels(self, frame_id, labels) -> tuple[int, dict]:
        """Validate a submission against the pending query; returns
        (http_status, body)."""
        with self._lock:
            if self._phase != PHASE_AWAITING or self._pending is None:
                return 409, {"error": "no pending label query"}
            p = self._pending
            if frame_id != p.frame_id:
                return 409, {"error": f"pending frame is {p.frame_id}, not {frame_id}"}
            try:
                submitted = {(int(l["row"]), int(l["col"])): int(l["class_id"])
                             for l in labels}
            except (KeyError, TypeError, ValueError):
                return 422, {"error": "labels must be {row, col, class_id} objects"}
            if len(submitted) != len(labels):
                return 422, {"error": "duplicate coordinates in submission"}
            if set(submitted) != set(p.coords):
                return 422, {"error": "submission must cover exactly the "
                                      "pending coordinates"}
            bad = [k for k in submitted.values()
                   if not 0 <= k < self.num_classes]
            if bad:
                return 422, {"error": f"class ids out of range: {sorted(set(bad))}"}
            ordered = [submitted[rc] for rc in p.coords]
        try:
            self._answers.put_nowait(ordered)
        except queue.Full:
            return 409, {"error": "a submission is already being processed"}
        return 200, {"accepted": len(ordered), "frame_id": frame_id}

    def subscribe(self) -> queue.Queue:
        q = queue.Queue(maxsize=64)
        q.put(self.session_state())  # initial state so clients can sync
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        try:
            self._subscribers.remove(q)
        except ValueError:
            pass


class HumanOracle(Oracle):
    """Adapter-facing oracle that parks the session until the controller
    receives a label submission over HTTP."""

    def __init__(self, controller: SessionController):
        self.controller = controller
        self._scene = None
        self._frame_id = None

    def begin_frame(self, frame_id, scene):
        self._frame_id = frame_id
        self._scene = scene

    def answer(self, frame_id, coords):
        h, w = self._scene.labels.shape
        pending = PendingQuery(frame_id=frame_id, coords=[(int(r), int(c))
                                                          for r, c in coords],
                               png_base64=_png_base64(self._scene.image),
                               height=h, width=w)
        return self.controller.await_labels(pending)

    def answer_dense(self, frame_id):
        raise OracleTimeout("dense labels cannot be supplied by a human oracle")


def default_console_dir():
    """The built browser console, when the repo checkout carries one."""
    from pathlib import Path

    candidate = Path(__file__).resolve().parents[2] / "frontend"
    if (candidate / "index.html").exists() and (candidate / "dist").exists():
        return candidate
    return None


def create_app(controller: SessionController, console_dir=None) -> FastAPI:
    app = FastAPI(title="activeseg session service")

    @app.get("/api/session")
    def get_session():
        return controller.session_state()

    @app.get("/api/frame")
    def get_frame():
        payload = controller.frame_payload()
        if payload is None:
            return JSONResponse({"error": "no pending frame"}, status_code=409)
        return payload

    @app.post("/api/labels")
    async def post_labels(body: dict):
        frame_id = body.get("frame_id")
        labels = body.get("labels")
        if not isinstance(frame_id, int) or not isinstance(labels, list):
            return JSONResponse(
                {"error": "body must carry integer frame_id and labels list"},
                status_code=422)
        status, doc = controller.submit_labels(frame_id, labels)
        return JSONResponse(doc, status_code=status)

    @app.get("/api/metrics")
    def get_metrics():
        return controller.metrics_snapshot()

    @app.get("/api/events")
    def get_events():
        def stream():
            q = controller.subscribe()
            try:
                while True:
                    try:
                        event = q.get(timeout=15.0)
                        yield f"data: {json.dumps(event)}\n\n"
                        if event.get("phase") in (PHASE_FINISHED, PHASE_FAILED):
                            break
                    except queue.Empty:
                        yield ": keepalive\n\n"
            finally:
                controller.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if console_dir is None:
        console_dir = default_console_dir()
    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(console_dir), html=True),
                  name="console")

    return app


class BackgroundServer:
    """uvicorn in a thread; used by tests and the scripted client."""

    def __init__(self, app, host="127.0.0.1", port=8008):
        import uvicorn

        self._config = uvicorn.Config(app, host=host, port=port,
                                      log_level="warning")
        self.server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self.server.run, daemon=True)
        self.host = host
        self.port = port

    def start(self, wait: float = 10.0):
        self._thread.start()
        deadline = time.time() + wait
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("service did not start in time")
            time.sleep(0.02)
        return self

    def stop(self):
        self.server.should_exit = True
        self._thread.join(timeout=10.0)


def serve(config: ExperimentConfig, host: str = "127.0.0.1", port: int = 8008,
          console_dir=None):
    """Blocking entry point for the `serve` CLI command."""
    import uvicorn

    controller = SessionController(config)
    controller.start()
    app = create_app(controller, console_dir=console_dir)
    if default_console_dir() or console_dir:
        print(f"annotation console: http://{host}:{port}/console/")
    uvicorn.run(app, host=host, port=port, log_level="info")
