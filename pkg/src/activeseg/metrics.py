"""Quantitative readouts: confusion-matrix mIoU, selection imbalance degree,
spatial diversity of selections, the forgetting matrix and run summaries.

Everything here is pure aggregation over immutable records; the only forward
passes happen in :func:`forgetting_eval`, which never mutates the model it is
given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics

SUMMARY_FORMAT_VERSION = "ataseg-summary-v1"


class ConfusionMatrix:
    """C x C counts, rows = ground truth, columns = prediction."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        if counts is None:
            self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_classes, num_classes) or (counts < 0).any():
                raise ValueError("confusion counts must be non-negative and C x C")
            self.counts = counts.copy()

    def add(self, truth: np.ndarray, pred: np.ndarray) -> None:
        t = np.asarray(truth, dtype=np.int64).ravel()
        p = np.asarray(pred, dtype=np.int64).ravel()
        flat = np.bincount(t * self.num_classes + p,
                           minlength=self.num_classes ** 2)
        self.counts += flat.reshape(self.num_classes, self.num_classes)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.counts += other.counts

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_from_maps(truth, pred, num_classes: int) -> np.ndarray:
    cm = ConfusionMatrix(num_classes)
    cm.add(truth, pred)
    return cm.counts


def miou(cm) -> tuple[np.ndarray, float]:
    """Per-class IoU and its mean. Classes with zero union (absent from both
    truth and prediction) are NaN per class and excluded from the mean."""
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    tp = np.diag(counts).astype(float)
    union = counts.sum(axis=0) + counts.sum(axis=1) - np.diag(counts)
    per_class = np.where(union > 0, tp / np.maximum(union, 1), np.nan)
    valid = union > 0
    mean = float(per_class[valid].mean()) if valid.any() else float("nan")
    return per_class, mean


def imbalance_degree(tracker) -> float | None:
    """Euclidean distance of the selected-class distribution from uniform;
    None before any selection has been made."""
    if tracker.total == 0:
        return None
    p = tracker.frequencies()
    c = len(p)
    return float(np.sqrt(np.sum((p - 1.0 / c) ** 2)))


@dataclass
class DiversityStats:
    per_frame: list          # mean pairwise distance per frame (0.0 if < 2 picks)
    low_count: int           # frames with fewer than 2 selections (flagged, kept)
    stream_mean: float | None  # mean over frames with >= 2 selections


def frame_diversity(coords) -> float:
    """Mean pairwise Euclidean distance of one frame's selections."""
    if len(coords) < 2:
        return 0.0
    pts = np.asarray(coords, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff ** 2).sum(-1))
    iu = np.triu_indices(len(pts), k=1)
    return float(d[iu].mean())


def spatial_diversity(selections_per_frame) -> DiversityStats:
    per_frame = []
    contributing = []
    low = 0
    for coords in selections_per_frame:
        val = frame_diversity(coords)
        per_frame.append(val)
        if len(coords) < 2:
            low += 1
        else:
            contributing.append(val)
    stream = float(np.mean(contributing)) if contributing else None
    return DiversityStats(per_frame=per_frame, low_count=low, stream_mean=stream)


def evaluate_frozen(net, scenes, num_classes: int) -> ConfusionMatrix:
    """Forward-only evaluation of a fixed model over a list of scenes."""
    cm = ConfusionMatrix(num_classes)
    for scene in scenes:
        logits, _ = numerics.forward(net, scene.image)
        cm.add(scene.labels, np.argmax(logits, axis=-1))
    return cm


def forgetting_eval(net_template, param_snapshots, domain_scenes,
                    num_classes: int) -> np.ndarray:
    """mIoU matrix: rows = parameter snapshots (e.g. after each domain),
    columns = evaluated domains. Evaluation is forward-only on a scratch
    copy of the network."""
    rows = len(param_snapshots)
    cols = len(domain_scenes)
    out = np.empty((rows, cols))
    scratch = net_template.clone()
    for i, params in enumerate(param_snapshots):
        scratch.set_params(params)
        for j, scenes in enumerate(domain_scenes):
            cm = evaluate_frozen(scratch, scenes, num_classes)
            out[i, j] = miou(cm)[1]
    return out


def summarize(records, num_classes: int, meta: dict | None = None) -> dict:
    """Aggregate a run's frame records into the summary document."""
    meta = dict(meta or {})
    if not records:
        return {"format_version": SUMMARY_FORMAT_VERSION, "no_data": True, **meta}

    cum = ConfusionMatrix(num_classes)
    per_domain: dict[int, ConfusionMatrix] = {}
    domain_order = []
    losses_acc = {"ce": 0.0, "ce_aug": 0.0, "ent": 0.0, "cst": 0.0, "total": 0.0}
    selections = []
    skipped = 0
    for rec in records:
        cum.counts += rec.confusion
        if rec.domain_id not in per_domain:
            per_domain[rec.domain_id] = ConfusionMatrix(num_classes)
            domain_order.append(rec.domain_id)
        per_domain[rec.domain_id].counts += rec.confusion
        for key in losses_acc:
            losses_acc[key] += getattr(rec.losses, key)
        selections.append([(r, c) for r, c, _ in rec.selected.entries])
        if not rec.adapted:
            skipped += 1

    n = len(records)
    domain_miou = {str(d): miou(per_domain[d])[1] for d in domain_order}
    diversity = spatial_diversity(selections)
    summary = {
        "format_version": SUMMARY_FORMAT_VERSION,
        "no_data": False,
        "frames": n,
        "miou_cum": miou(cum)[1],
        "per_class_iou_cum": [None if np.isnan(v) else float(v)
                              for v in miou(cum)[0]],
        "domain_miou": domain_miou,
        "domain_miou_mean": float(np.mean(list(domain_miou.values()))),
        "final_domain_miou": domain_miou[str(domain_order[-1])],
        "mean_losses": {k: v / n for k, v in losses_acc.items()},
        "selected_total": int(sum(len(s) for s in selections)),
        "spatial_diversity": diversity.stream_mean,
        "frames_without_pairs": diversity.low_count,
        "frames_skipped": skipped,
        **meta,
    }
    return summary
