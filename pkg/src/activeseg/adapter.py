"""The per-frame online adaptation loop.

Each frame is predicted with the current parameters, scored and annotated
within the active budget, and then the network takes exactly one Adam step.
Evaluation always uses the pre-update prediction. Two single-view adapters
(plain, and its no-label ablation), a two-view flip-consistency adapter, and
dense-label supervised counterparts are provided.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses, metrics, numerics
from .annotator import ActiveLabelSet, ClassFrequencyTracker, annotate
from .errors import ConfigurationError, OracleError, StreamAbort
from .losses import ConsistencyKind, LossBreakdown

ADAPTER_KINDS = ("b0", "b1", "b0_nolabel", "b1_nolabel", "fully_b0", "fully_b1")
NOLABEL_KINDS = ("b0_nolabel", "b1_nolabel")
FULLY_KINDS = ("fully_b0", "fully_b1")
TWO_VIEW_KINDS = ("b1", "b1_nolabel", "fully_b1")


@dataclass
class AdapterSpec:
    kind: str = "b1"
    lambda_ent: float = 1.0
    lambda_cst: float = 1.0
    cst_kind: ConsistencyKind = ConsistencyKind.SCE
    budget: int = 16
    cst_stop_grad: bool = False

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ConfigurationError(f"unknown adapter kind {self.kind!r}")
        self.cst_kind = ConsistencyKind(self.cst_kind)
        if self.kind in NOLABEL_KINDS and self.budget != 0:
            raise ConfigurationError("no-label adapters must have budget 0")
        if self.kind not in NOLABEL_KINDS and self.kind not in FULLY_KINDS \
                and self.budget <= 0:
            raise ConfigurationError("labeled adapters need budget >= 1")


class Oracle:
    """Label source interface. ``begin_frame`` hands over the current scene
    (the simulated oracle reads its labels, a human-facing oracle shows its
    image); ``answer`` returns class ids for exactly the queried coordinates."""

    def begin_frame(self, frame_id: int, scene) -> None:
        raise NotImplementedError

    def answer(self, frame_id: int, coords) -> list:
        raise NotImplementedError

    def answer_dense(self, frame_id: int) -> np.ndarray:
        raise NotImplementedError


class SimulatedOracle(Oracle):
    """Answers every query from the scene's ground-truth label map."""

    def __init__(self):
        self._scene = None
        self._frame_id = None

    def begin_frame(self, frame_id, scene):
        self._frame_id = frame_id
        self._scene = scene

    def answer(self, frame_id, coords):
        if self._scene is None or frame_id != self._frame_id:
            raise OracleError(f"no scene registered for frame {frame_id}")
        return [int(self._scene.labels[r, c]) for r, c in coords]

    def answer_dense(self, frame_id):
        if self._scene is None or frame_id != self._frame_id:
            raise OracleError(f"no scene registered for frame {frame_id}")
        return self._scene.labels


@dataclass
class FrameRecord:
    frame_id: int
    domain_id: int
    losses: LossBreakdown
    selected: ActiveLabelSet
    confusion: np.ndarray
    miou_cum: float
    miou_domain: float
    wall_time: float
    adapted: bool


class Session:
    """One online adaptation session: network, persistent optimizer state,
    class-frequency tracker and the annotator RNG. Strictly sequential."""

    def __init__(self, net: numerics.SegNet, adam: numerics.AdamState,
                 seed: int = 0):
        self.net = net
        self.adam = adam
        self.tracker = ClassFrequencyTracker(net.num_classes)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
        self.frames_seen = 0
        self.events: list[str] = []

    @property
    def num_classes(self) -> int:
        return self.net.num_classes


def _empty_labels(frame_id: int) -> ActiveLabelSet:
    return ActiveLabelSet(entries=[], frame_id=frame_id)


def _query_labels(session, probs_for_query, annotator_spec, oracle, frame_id,
                  budget) -> tuple[ActiveLabelSet, bool]:
    """Annotate + ask the oracle. Returns (labels, ok); ok=False means the
    oracle failed and the frame must not adapt."""
    if budget == 0:
        return _empty_labels(frame_id), True
    result = annotate(annotator_spec, probs_for_query, session.tracker,
                      session.rng, budget)
    try:
        classes = oracle.answer(frame_id, result.coords)
    except OracleError as exc:
        session.events.append(f"frame {frame_id}: oracle failed ({exc})")
        return _empty_labels(frame_id), False
    if len(classes) != len(result.coords):
        session.events.append(f"frame {frame_id}: oracle answered wrong count")
        return _empty_labels(frame_id), False
    entries = [(r, c, int(k)) for (r, c), k in zip(result.coords, classes)]
    return ActiveLabelSet(entries=entries, frame_id=frame_id), True


def _finish_update(session, breakdown, frame_id, grad_fn) -> None:
    if not np.isfinite(breakdown.total):
        raise StreamAbort(frame_id, f"non-finite loss {breakdown.total}")
    grad = grad_fn()
    session.net.set_params(numerics.adam_step(session.net.params, grad, session.adam))


def step_b0(session, scene, adapter_spec, annotator_spec, oracle, frame_id):
    """Single-view step: predict, query up to b labels, one Adam step on the
    sparse-CE + entropy objective. Returns (pre-update probs, labels, losses,
    adapted)."""
    logits, tape = numerics.forward(session.net, scene.image)
    probs = numerics.softmax_pixels(logits)
    oracle.begin_frame(frame_id, scene)
    labels, ok = _query_labels(session, probs, annotator_spec, oracle,
                               frame_id, adapter_spec.budget)
    if not ok:
        return probs, labels, LossBreakdown.compose(
            0.0, 0.0, 0.0, 0.0, adapter_spec.lambda_ent, 0.0), False
    session.tracker.update(labels.class_ids)
    breakdown, dlogits = losses.objective_b0(probs, labels, adapter_spec.lambda_ent)
    _finish_update(session, breakdown, frame_id,
                   lambda: numerics.backward(session.net, tape, dlogits))
    return probs, labels, breakdown, True


def step_b1(session, scene, adapter_spec, annotator_spec, oracle, frame_id):
    """Two-view step: the horizontally flipped view is re-aligned to original
    coordinates, both views are averaged for evaluation and annotation, and
    gradients from both views accumulate into one Adam step."""
    image = scene.image
    image_aug = np.ascontiguousarray(image[:, ::-1, :])
    logits, tape = numerics.forward(session.net, image)
    logits_aug, tape_aug = numerics.forward(session.net, image_aug)
    probs = numerics.softmax_pixels(logits)
    probs_aug = numerics.softmax_pixels(logits_aug)[:, ::-1, :]  # back to original coords
    probs_mean = 0.5 * (probs + probs_aug)

    oracle.begin_frame(frame_id, scene)
    labels, ok = _query_labels(session, probs_mean, annotator_spec, oracle,
                               frame_id, adapter_spec.budget)
    if not ok:
        return probs_mean, labels, LossBreakdown.compose(
            0.0, 0.0, 0.0, 0.0, adapter_spec.lambda_ent,
            adapter_spec.lambda_cst), False
    session.tracker.update(labels.class_ids)
    breakdown, dlogits, dlogits_aug = losses.objective_b1(
        probs, probs_aug, labels, adapter_spec.lambda_ent,
        adapter_spec.lambda_cst, adapter_spec.cst_kind,
        stop_grad_target=adapter_spec.cst_stop_grad)

    def grad_fn():
        g = numerics.backward(session.net, tape, dlogits)
        g += numerics.backward(session.net, tape_aug,
                               np.ascontiguousarray(dlogits_aug[:, ::-1, :]))
        return g

    _finish_update(session, breakdown, frame_id, grad_fn)
    return probs_mean, labels, breakdown, True


def step_fully(session, scene, adapter_spec, oracle, frame_id):
    """Supervised counterpart: the dense ground-truth label map replaces the
    active labels; otherwise identical to the corresponding adapter."""
    two_view = adapter_spec.kind == "fully_b1"
    image = scene.image
    logits, tape = numerics.forward(session.net, image)
    probs = numerics.softmax_pixels(logits)
    if two_view:
        image_aug = np.ascontiguousarray(image[:, ::-1, :])
        logits_aug, tape_aug = numerics.forward(session.net, image_aug)
        probs_aug = numerics.softmax_pixels(logits_aug)[:, ::-1, :]
        eval_probs = 0.5 * (probs + probs_aug)
    else:
        eval_probs = probs
    oracle.begin_frame(frame_id, scene)
    try:
        dense = oracle.answer_dense(frame_id)
    except OracleError as exc:
        session.events.append(f"frame {frame_id}: oracle failed ({exc})")
        return eval_probs, _empty_labels(frame_id), LossBreakdown.compose(
            0.0, 0.0, 0.0, 0.0, adapter_spec.lambda_ent,
            adapter_spec.lambda_cst if two_view else 0.0), False
    session.tracker.update(dense.ravel())
    if two_view:
        breakdown, dlogits, dlogits_aug = losses.objective_b1_dense(
            probs, probs_aug, dense, adapter_spec.lambda_ent,
            adapter_spec.lambda_cst, adapter_spec.cst_kind,
            stop_grad_target=adapter_spec.cst_stop_grad)

        def grad_fn():
            g = numerics.backward(session.net, tape, dlogits)
            g += numerics.backward(session.net, tape_aug,
                                   np.ascontiguousarray(dlogits_aug[:, ::-1, :]))
            return g
    else:
        breakdown, dlogits = losses.objective_b0_dense(
            probs, dense, adapter_spec.lambda_ent)

        def grad_fn():
            return numerics.backward(session.net, tape, dlogits)

    _finish_update(session, breakdown, frame_id, grad_fn)
    return eval_probs, _empty_labels(frame_id), breakdown, True


def step_frame(session, scene, adapter_spec, annotator_spec, oracle, frame_id):
    kind = adapter_spec.kind
    if kind in FULLY_KINDS:
        return step_fully(session, scene, adapter_spec, oracle, frame_id)
    if kind in TWO_VIEW_KINDS:
        return step_b1(session, scene, adapter_spec, annotator_spec, oracle, frame_id)
    return step_b0(session, scene, adapter_spec, annotator_spec, oracle, frame_id)


@dataclass
class RunResult:
    records: list
    domain_snapshots: list  # [(domain_id, params after finishing the domain)]


def run_stream(session, scenes, domain_ids, adapter_spec, annotator_spec,
               oracle, on_record=None) -> RunResult:
    """Process the stream strictly in order, one adaptation step per frame.

    Also captures a parameter snapshot at the end of every domain segment for
    later forgetting analysis. ``on_record`` (if given) is called with each
    finished FrameRecord, e.g. to feed live metrics.
    """
    if len(scenes) == 0:
        raise ConfigurationError("stream is empty")
    num_classes = session.num_classes
    cum = metrics.ConfusionMatrix(num_classes)
    domain_cm = metrics.ConfusionMatrix(num_classes)
    records = []
    snapshots = []
    current_domain = int(domain_ids[0])
    for i, scene in enumerate(scenes):
        domain = int(domain_ids[i])
        if domain != current_domain:
            snapshots.append((current_domain, session.net.params.copy()))
            domain_cm = metrics.ConfusionMatrix(num_classes)
            current_domain = domain
        t0 = time.perf_counter()
        eval_probs, labels, breakdown, adapted = step_frame(
            session, scene, adapter_spec, annotator_spec, oracle, i)
        session.frames_seen += 1
        pred = np.argmax(eval_probs, axis=-1)
        delta = metrics.confusion_from_maps(scene.labels, pred, num_classes)
        cum.counts += delta
        domain_cm.counts += delta
        record = FrameRecord(
            frame_id=i, domain_id=domain, losses=breakdown, selected=labels,
            confusion=delta, miou_cum=metrics.miou(cum)[1],
            miou_domain=metrics.miou(domain_cm)[1],
            wall_time=time.perf_counter() - t0, adapted=adapted)
        records.append(record)
        if on_record is not None:
            on_record(record)
    snapshots.append((current_domain, session.net.params.copy()))
    return RunResult(records=records, domain_snapshots=snapshots)
