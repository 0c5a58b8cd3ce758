"""HTTP session service: state machine, validation, and the scripted-client
oracle equivalence over the wire."""

import base64
import io
import json
import socket
import threading
import time
from dataclasses import replace

import httpx
import numpy as np
import pytest

from activeseg import adapter, runner, streamlab
from activeseg.config import PretrainConfig, desk_config
from activeseg.service import (BackgroundServer, SessionController,
                               create_app)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def service_config(tmp_path, frames_per_domain=2, budget=4, seeds=(0,),
                   timeout=30.0):
    cfg = desk_config(output_dir=str(tmp_path / "serve_run"), seeds=list(seeds),
                      budget=budget)
    cfg = replace(
        cfg,
        stream=replace(cfg.stream, frames_per_domain=frames_per_domain,
                       height=24, width=24),
        pretrain=PretrainConfig(scenes=20, holdout=5, epochs=2, lr=3e-3,
                                hidden=(8, 8)),
        oracle="human",
        oracle_timeout=timeout,
    )
    return cfg


@pytest.fixture()
def live_service(tmp_path):
    cfg = service_config(tmp_path)
    controller = SessionController(cfg)
    server = BackgroundServer(create_app(controller), port=free_port()).start()
    controller.start()
    base = f"http://127.0.0.1:{server.port}"
    yield base, controller, cfg
    server.stop()


def wait_for_phase(client, base, phases, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        state = client.get(f"{base}/api/session").json()
        if state["phase"] in phases:
            return state
        time.sleep(0.02)
    raise TimeoutError(f"service never reached {phases}; last: {state}")


def answer_from_ground_truth(client, base, cfg):
    """Scripted oracle: label every pending query from the regenerated
    ground-truth stream until the session finishes."""
    spec = cfg.stream.to_stream_spec(cfg.seeds[0])
    scenes = streamlab.build_stream(spec)
    answered = []
    while True:
        state = wait_for_phase(client, base, ("awaiting_labels", "finished",
                                              "failed"))
        if state["phase"] == "failed":
            raise AssertionError(f"session failed: {state['error']}")
        if state["phase"] == "finished":
            return answered
        frame = client.get(f"{base}/api/frame").json()
        fid = frame["frame_id"]
        labels = [{"row": r, "col": c,
                   "class_id": int(scenes[fid].labels[r, c])}
                  for r, c in frame["pending"]]
        resp = client.post(f"{base}/api/labels",
                           json={"frame_id": fid, "labels": labels})
        assert resp.status_code == 200, resp.text
        answered.append((fid, len(labels)))


# ---------------------------------------------------------------------------
# state machine and validation
# ---------------------------------------------------------------------------

def test_frame_endpoint_before_ready_is_409(tmp_path):
    cfg = service_config(tmp_path)
    controller = SessionController(cfg)  # not started: phase "starting"
    app = create_app(controller)
    server = BackgroundServer(app, port=free_port()).start()
    try:
        with httpx.Client(timeout=10.0) as client:
            r = client.get(f"http://127.0.0.1:{server.port}/api/frame")
            assert r.status_code == 409
            state = client.get(
                f"http://127.0.0.1:{server.port}/api/session").json()
            assert state["phase"] == "starting"
    finally:
        server.stop()

def test_labels_validation_and_full_session(live_service):
    base, controller, cfg = live_service
    client = httpx.Client(timeout=30.0)
    state = wait_for_phase(client, base, ("awaiting_labels",))
    frame = client.get(f"{base}/api/frame").json()
    fid = frame["frame_id"]
    pending = [tuple(rc) for rc in frame["pending"]]
    assert len(pending) == cfg.adapter.budget
    assert frame["palette"][0]["id"] == 0
    # PNG decodes to the advertised size
    png = base64.b64decode(frame["png_base64"])
    from PIL import Image

    img = Image.open(io.BytesIO(png))
    assert img.size == (frame["width"], frame["height"])

    # coordinate outside the pending set -> 422, state unchanged
    bad = [{"row": r, "col": c, "class_id": 0} for r, c in pending[:-1]]
    bad.append({"row": 23, "col": 23, "class_id": 0})
    if (23, 23) in pending:
        bad[-1] = {"row": 22, "col": 22, "class_id": 0}
    r = client.post(f"{base}/api/labels", json={"frame_id": fid, "labels": bad})
    assert r.status_code == 422
    assert client.get(f"{base}/api/session").json()["phase"] == "awaiting_labels"

    # wrong frame id -> 409
    r = client.post(f"{base}/api/labels",
                    json={"frame_id": fid + 999,
                          "labels": [{"row": 0, "col": 0, "class_id": 0}]})
    assert r.status_code == 409

    # class id out of range -> 422
    bad = [{"row": r_, "col": c_, "class_id": 99} for r_, c_ in pending]
    r = client.post(f"{base}/api/labels", json={"frame_id": fid, "labels": bad})
    assert r.status_code == 422

    # now answer everything from ground truth until finished
    answered = answer_from_ground_truth(client, base, cfg)
    total = cfg.stream.frames_per_domain * 5
    assert [fid for fid, _ in answered] == list(range(fid, total))
    controller.join(30.0)
    with httpx.Client(timeout=10.0) as c2:
        metrics_doc = c2.get(f"{base}/api/metrics").json()
    assert metrics_doc["frames_done"] == total
    assert "summary" in metrics_doc

def test_events_stream_reports_transitions(live_service):
    base, controller, cfg = live_service
    events = []
    stop = threading.Event()

    def listen():
        with httpx.Client(timeout=None) as client:
            with client.stream("GET", f"{base}/api/events") as resp:
                for line in resp.iter_lines():
                    if line.startswith("data: "):
                        event = json.loads(line[len("data: "):])
                        events.append(event)
                        if event["phase"] in ("finished", "failed"):
                            break
                    if stop.is_set():
                        break

    listener = threading.Thread(target=listen, daemon=True)
    listener.start()
    client = httpx.Client(timeout=30.0)
    answer_from_ground_truth(client, base, cfg)
    listener.join(30.0)
    stop.set()
    phases = [e["phase"] for e in events]
    assert "awaiting_labels" in phases
    assert phases[-1] == "finished"
    seqs = [e["seq"] for e in events]
    assert seqs == sorted(seqs)


# ---------------------------------------------------------------------------
# oracle timeout
# ---------------------------------------------------------------------------

def test_timeout_skips_frame_and_advances(tmp_path):
    cfg = service_config(tmp_path, frames_per_domain=1, budget=2, timeout=0.3)
    controller = SessionController(cfg)
    server = BackgroundServer(create_app(controller), port=free_port()).start()
    try:
        controller.start()
        controller.join(120.0)
        state = controller.session_state()
        assert state["phase"] == "finished"
        summary = controller.metrics_snapshot()["summary"]
        assert summary["frames_skipped"] == 5  # every frame timed out
        assert summary["oracle_events"]
    finally:
        server.stop()


def test_console_static_mount_when_built(tmp_path):
    from activeseg.service import create_app, default_console_dir

    console = default_console_dir()
    cfg = service_config(tmp_path)
    controller = SessionController(cfg)
    server = BackgroundServer(create_app(controller), port=free_port()).start()
    try:
        with httpx.Client(timeout=10.0) as client:
            r = client.get(f"http://127.0.0.1:{server.port}/console/")
            if console is None:
                assert r.status_code == 404
            else:
                assert r.status_code == 200
                assert "annotation console" in r.text
                r = client.get(
                    f"http://127.0.0.1:{server.port}/console/dist/main.js")
                assert r.status_code == 200
    finally:
        server.stop()


# ---------------------------------------------------------------------------
# S1: oracle equivalence through the wire
# ---------------------------------------------------------------------------

def test_scripted_wire_client_matches_simulated_oracle(tmp_path):
    cfg = service_config(tmp_path, frames_per_domain=2, budget=4)

    controller = SessionController(cfg)
    server = BackgroundServer(create_app(controller), port=free_port()).start()
    try:
        controller.start()
        client = httpx.Client(timeout=30.0)
        answer_from_ground_truth(client, f"http://127.0.0.1:{server.port}", cfg)
        controller.join(60.0)
    finally:
        server.stop()
    assert controller.session_state()["phase"] == "finished"
    wire_net, wire_state = streamlab.load_checkpoint(
        tmp_path / "serve_run" / "seed_0" / "checkpoint.npz")

    # reference: simulated oracle, same config and seed
    source_net = runner.load_or_pretrain_source(cfg)
    ref = runner.execute_seed(cfg, source_net, cfg.seeds[0],
                              oracle=adapter.SimulatedOracle())
    ref_params = ref["session"].net.params

    assert np.array_equal(wire_net.params, ref_params)
    assert wire_state.step_count == ref["session"].adam.step_count
