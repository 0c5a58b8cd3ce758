"""Training objectives for the online adapter.

All losses operate on per-pixel probability maps P of shape (H, W, C) as
produced by ``numerics.softmax_pixels``, and their gradients are returned in
logit space (i.e. already pushed through the per-pixel softmax Jacobian).
Logs are natural; log arguments are clamped at 1e-12 so exactly-zero
probabilities cannot yield -inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UsageError

LOG_CLAMP = 1e-12


class ConsistencyKind(str, Enum):
    SCE = "sce"
    L1 = "l1"
    MSE = "mse"


@dataclass
class LossBreakdown:
    """Components of one adaptation objective. ``total`` is always recomposed
    as ce + ce_aug + lambda_ent * ent + lambda_cst * cst."""

    ce: float
    ce_aug: float
    ent: float
    cst: float
    total: float
    lambda_ent: float
    lambda_cst: float

    @classmethod
    def compose(cls, ce, ce_aug, ent, cst, lambda_ent, lambda_cst):
        total = ce + ce_aug + lambda_ent * ent + lambda_cst * cst
        return cls(ce=ce, ce_aug=ce_aug, ent=ent, cst=cst, total=total,
                   lambda_ent=lambda_ent, lambda_cst=lambda_cst)


def _safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_CLAMP))


def _label_arrays(labels, shape):
    """Normalize a label set to (rows, cols, classes) int arrays, validating
    bounds against the (H, W, C) probability shape."""
    if labels is None:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    if hasattr(labels, "rows"):
        rows, cols, classes = labels.rows, labels.cols, labels.class_ids
    else:
        triples = list(labels)
        if not triples:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty
        arr = np.asarray(triples, dtype=np.int64)
        rows, cols, classes = arr[:, 0], arr[:, 1], arr[:, 2]
    h, w, c = shape
    if len(rows) and (rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w):
        raise UsageError("labeled coordinate out of bounds")
    if len(classes) and (classes.min() < 0 or classes.max() >= c):
        raise UsageError(f"label class id outside [0, {c})")
    return rows, cols, classes


def pixel_entropy(probs: np.ndarray) -> np.ndarray:
    """(H, W) map of per-pixel prediction entropies, with 0*log(0) = 0."""
    plogp = np.where(probs > 0.0, probs * _safe_log(probs), 0.0)
    return -plogp.sum(axis=-1)


def ce_sparse(probs: np.ndarray, labels) -> float:
    """Mean negative log-probability of the true class over the labeled
    pixels; 0.0 for an empty label set."""
    rows, cols, classes = _label_arrays(labels, probs.shape)
    if len(rows) == 0:
        return 0.0
    picked = probs[rows, cols, classes]
    return float(-np.sum(_safe_log(picked)) / len(rows))


def ce_dense(probs: np.ndarray, label_map: np.ndarray) -> float:
    """Cross-entropy against a full (H, W) label map, averaged over pixels."""
    h, w, _ = probs.shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    picked = probs[ii, jj, label_map]
    return float(-np.sum(_safe_log(picked.ravel())) / (h * w))


def ce_dense_with_grad(probs: np.ndarray, label_map: np.ndarray):
    """Dense CE plus its logit-space gradient (P - onehot) / (H*W)."""
    h, w, _ = probs.shape
    loss = ce_dense(probs, label_map)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dlogits = probs / (h * w)
    dlogits[ii, jj, label_map] -= 1.0 / (h * w)
    return loss, dlogits


def ent_full(probs: np.ndarray) -> float:
    """Mean per-pixel prediction entropy over the whole image."""
    h, w, _ = probs.shape
    return float(pixel_entropy(probs).sum() / (h * w))


def cst(probs: np.ndarray, probs_aug: np.ndarray, kind: ConsistencyKind) -> float:
    """Consistency between the two aligned views: soft cross-entropy,
    mean absolute difference, or mean squared difference."""
    if probs.shape != probs_aug.shape:
        raise UsageError(
            f"view shapes differ: {probs.shape} vs {probs_aug.shape}"
        )
    h, w, _ = probs.shape
    n = h * w
    kind = ConsistencyKind(kind)
    if kind is ConsistencyKind.SCE:
        return float(-np.sum(probs * _safe_log(probs_aug)) / n)
    diff = probs - probs_aug
    if kind is ConsistencyKind.L1:
        return float(np.sum(np.abs(diff)) / n)
    return float(np.sum(diff * diff) / n)


def probs_grad_to_logits_grad(probs: np.ndarray, gprobs: np.ndarray) -> np.ndarray:
    """Apply the per-pixel softmax Jacobian: dL/dz = P * (g - <P, g>)."""
    inner = np.sum(probs * gprobs, axis=-1, keepdims=True)
    return probs * (gprobs - inner)


def _ce_sparse_logit_grad(probs: np.ndarray, rows, cols, classes) -> np.ndarray:
    """Closed-form CE gradient through softmax: (P - onehot)/|labels| at the
    labeled pixels, zero elsewhere. Accumulating updates keep this exact even
    if a coordinate is labeled more than once."""
    dlogits = np.zeros_like(probs)
    n = len(rows)
    if n == 0:
        return dlogits
    np.add.at(dlogits, (rows, cols), probs[rows, cols] / n)
    np.subtract.at(dlogits, (rows, cols, classes), 1.0 / n)
    return dlogits


def _ent_probs_grad(probs: np.ndarray) -> np.ndarray:
    h, w, _ = probs.shape
    return -(_safe_log(probs) + 1.0) / (h * w)


def _cst_probs_grads(probs, probs_aug, kind: ConsistencyKind):
    """(dL/dP, dL/dP') of the consistency term."""
    h, w, _ = probs.shape
    n = h * w
    if kind is ConsistencyKind.SCE:
        g = -_safe_log(probs_aug) / n
        g_aug = -(probs / np.maximum(probs_aug, LOG_CLAMP)) / n
        return g, g_aug
    diff = probs - probs_aug
    if kind is ConsistencyKind.L1:
        s = np.sign(diff) / n
        return s, -s
    g = 2.0 * diff / n
    return g, -g


def objective_b0(probs: np.ndarray, labels, lambda_ent: float):
    """Sparse CE plus weighted entropy minimization.

    Returns (breakdown, dloss_dlogits) with the gradient already in logit
    space for the single view.
    """
    rows, cols, classes = _label_arrays(labels, probs.shape)
    ce = ce_sparse(probs, labels)
    ent = ent_full(probs)
    breakdown = LossBreakdown.compose(ce, 0.0, ent, 0.0, lambda_ent, 0.0)
    dlogits = _ce_sparse_logit_grad(probs, rows, cols, classes)
    if lambda_ent != 0.0:
        dlogits += lambda_ent * probs_grad_to_logits_grad(probs, _ent_probs_grad(probs))
    return breakdown, dlogits


def objective_b0_dense(probs: np.ndarray, label_map: np.ndarray, lambda_ent: float):
    """Supervised-counterpart objective: dense CE over the full label map plus
    weighted entropy. Mirrors :func:`objective_b0` term by term so that with
    an exhaustive row-major label set the two routes agree bit for bit."""
    ce, dlogits = ce_dense_with_grad(probs, label_map)
    ent = ent_full(probs)
    breakdown = LossBreakdown.compose(ce, 0.0, ent, 0.0, lambda_ent, 0.0)
    if lambda_ent != 0.0:
        dlogits += lambda_ent * probs_grad_to_logits_grad(probs, _ent_probs_grad(probs))
    return breakdown, dlogits


def objective_b1_dense(probs, probs_aug, label_map, lambda_ent: float,
                       lambda_cst: float, kind: ConsistencyKind,
                       stop_grad_target: bool = False):
    """Two-view supervised counterpart: dense CE on both views plus entropy
    and consistency, with the same gradient accumulation as
    :func:`objective_b1`."""
    kind = ConsistencyKind(kind)
    ce, dlogits = ce_dense_with_grad(probs, label_map)
    ce_aug, dlogits_aug = ce_dense_with_grad(probs_aug, label_map)
    ent = ent_full(probs)
    cst_val = cst(probs, probs_aug, kind)
    breakdown = LossBreakdown.compose(ce, ce_aug, ent, cst_val, lambda_ent, lambda_cst)
    gp = np.zeros_like(probs)
    gp_aug = np.zeros_like(probs_aug)
    if lambda_ent != 0.0:
        gp += lambda_ent * _ent_probs_grad(probs)
    if lambda_cst != 0.0:
        gc, gc_aug = _cst_probs_grads(probs, probs_aug, kind)
        gp += lambda_cst * gc
        if not stop_grad_target:
            gp_aug += lambda_cst * gc_aug
    dlogits += probs_grad_to_logits_grad(probs, gp)
    dlogits_aug += probs_grad_to_logits_grad(probs_aug, gp_aug)
    return breakdown, dlogits, dlogits_aug


def objective_b1(probs, probs_aug, labels, lambda_ent: float, lambda_cst: float,
                 kind: ConsistencyKind, stop_grad_target: bool = False):
    """Two-view objective: CE on both views, entropy on the original view and
    a consistency term between them.

    Gradients flow into both views, including through both arguments of the
    consistency term; ``stop_grad_target`` detaches the augmented view inside
    the consistency term only.
    """
    if probs.shape != probs_aug.shape:
        raise UsageError(
            f"view shapes differ: {probs.shape} vs {probs_aug.shape}"
        )
    kind = ConsistencyKind(kind)
    rows, cols, classes = _label_arrays(labels, probs.shape)
    ce = ce_sparse(probs, labels)
    ce_aug = ce_sparse(probs_aug, labels)
    ent = ent_full(probs)
    cst_val = cst(probs, probs_aug, kind)
    breakdown = LossBreakdown.compose(ce, ce_aug, ent, cst_val, lambda_ent, lambda_cst)

    dlogits = _ce_sparse_logit_grad(probs, rows, cols, classes)
    dlogits_aug = _ce_sparse_logit_grad(probs_aug, rows, cols, classes)
    gp = np.zeros_like(probs)
    gp_aug = np.zeros_like(probs_aug)
    if lambda_ent != 0.0:
        gp += lambda_ent * _ent_probs_grad(probs)
    if lambda_cst != 0.0:
        gc, gc_aug = _cst_probs_grads(probs, probs_aug, kind)
        gp += lambda_cst * gc
        if not stop_grad_target:
            gp_aug += lambda_cst * gc_aug
    dlogits += probs_grad_to_logits_grad(probs, gp)
    dlogits_aug += probs_grad_to_logits_grad(probs_aug, gp_aug)
    return breakdown, dlogits, dlogits_aug
