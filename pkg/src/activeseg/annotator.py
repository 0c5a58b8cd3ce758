"""Pixel annotators: active scores, the budgeted greedy selector, spatial
suppression and class-frequency reweighting.

A score map assigns every pixel a preference value; the selector repeatedly
takes the eligible argmax (ties broken toward the smallest row-major index)
until the budget is spent. Scores are computed once per frame and only the
eligibility mask changes between picks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, losses
from .errors import ConfigurationError


@dataclass
class ActiveLabelSet:
    """Sparse (row, col, class) annotations acquired for one frame."""

    entries: list  # [(row, col, class_id)] in selection order
    frame_id: int

    def __len__(self):
        return len(self.entries)

    def _arrays(self):
        if not self.entries:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty
        arr = np.asarray(self.entries, dtype=np.int64)
        return arr[:, 0], arr[:, 1], arr[:, 2]

    @property
    def rows(self):
        return self._arrays()[0]

    @property
    def cols(self):
        return self._arrays()[1]

    @property
    def class_ids(self):
        return self._arrays()[2]


class ClassFrequencyTracker:
    """Running count of every label class selected so far across the stream."""

    def __init__(self, num_classes: int):
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.total = 0

    def update(self, class_ids) -> None:
        for c in np.asarray(class_ids, dtype=np.int64).ravel():
            self.counts[c] += 1
            self.total += 1

    def frequencies(self) -> np.ndarray:
        """Empirical class distribution; all zeros before any selection."""
        if self.total == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / self.total

    def copy(self) -> "ClassFrequencyTracker":
        out = ClassFrequencyTracker(len(self.counts))
        out.counts = self.counts.copy()
        out.total = self.total
        return out


IMBALANCE_MODES = ("none", "multiplicative", "blend")
ANNOTATOR_KINDS = ("rand", "ent", "ripu", "bvsb")


@dataclass
class AnnotatorSpec:
    kind: str = "bvsb"
    ripu_k: int = 1
    suppression_k: int | None = None
    imbalance_mode: str = "none"
    imbalance_omega: float = 0.0

    def __post_init__(self):
        if self.kind not in ANNOTATOR_KINDS:
            raise ConfigurationError(f"unknown annotator kind {self.kind!r}")
        if self.ripu_k < 0:
            raise ConfigurationError("ripu_k must be >= 0")
        if self.suppression_k is not None:
            if self.suppression_k < 1 or self.suppression_k % 2 == 0:
                raise ConfigurationError("suppression_k must be a positive odd integer")
        if self.imbalance_mode not in IMBALANCE_MODES:
            raise ConfigurationError(f"unknown imbalance mode {self.imbalance_mode!r}")
        if not 0.0 <= self.imbalance_omega <= 1.0:
            raise ConfigurationError("imbalance_omega must lie in [0, 1]")


def scaled_suppression(width: int, base: int = 129, base_width: int = 960) -> int:
    """Scale the reference suppression square to the working resolution,
    rounded to the nearest odd integer (minimum 1)."""
    k = base * width / base_width
    return max(1, int(round((k - 1) / 2.0)) * 2 + 1)


def score_rand(shape, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform [0, 1) scores."""
    return rng.random(shape)


def score_ent(probs: np.ndarray) -> np.ndarray:
    """Per-pixel prediction entropy."""
    return losses.pixel_entropy(probs)


def score_bvsb(probs: np.ndarray) -> np.ndarray:
    """Negated best-versus-second-best margin, so the argmax picks the pixel
    with the smallest top-2 gap (most uncertain)."""
    if probs.shape[-1] < 2:
        raise ConfigurationError("BvSB needs at least 2 classes")
    top2 = np.partition(probs, -2, axis=-1)
    return -(top2[..., -1] - top2[..., -2])


def score_ripu(probs: np.ndarray, k: int) -> np.ndarray:
    """Region impurity times prediction uncertainty.

    Impurity is the entropy of hard-prediction class frequencies in the
    clipped (2k+1)^2 neighborhood of each pixel.
    """
    num_classes = probs.shape[-1]
    pred = np.argmax(probs, axis=-1)
    counts, sizes = kernels.window_class_counts(pred, k, num_classes)
    freq = counts / sizes[..., None]
    plogp = np.where(freq > 0.0, freq * np.log(np.maximum(freq, losses.LOG_CLAMP)), 0.0)
    impurity = -plogp.sum(axis=-1)
    return impurity * losses.pixel_entropy(probs)


def apply_imbalance(scores: np.ndarray, probs: np.ndarray,
                    tracker: ClassFrequencyTracker, mode: str,
                    omega: float = 0.0) -> np.ndarray:
    """Reweight scores by how rarely each pixel's predicted class has been
    selected so far. Multiplicative: A * (1 - p(yhat)); blend:
    (1 - omega) * A + omega * (1 - p(yhat))."""
    if mode == "none":
        return scores
    if not 0.0 <= omega <= 1.0:
        raise ConfigurationError("omega must lie in [0, 1]")
    yhat = np.argmax(probs, axis=-1)
    rarity = 1.0 - tracker.frequencies()[yhat]
    if mode == "multiplicative":
        return scores * rarity
    if mode == "blend":
        return (1.0 - omega) * scores + omega * rarity
    raise ConfigurationError(f"unknown imbalance mode {mode!r}")


def select(scores: np.ndarray, budget: int, suppression_k: int | None = None):
    """Greedy budgeted argmax selection.

    Each pick takes the highest-scoring eligible pixel (first row-major index
    on ties) and then removes either that pixel or, with suppression, the
    k x k square centered on it, from eligibility. Returns the picked
    (row, col) pairs in selection order.
    """
    h, w = scores.shape
    work = np.ascontiguousarray(scores, dtype=float).ravel().copy()
    grid = work.reshape(h, w)
    half = suppression_k // 2 if suppression_k is not None else 0
    picked = []
    for _ in range(budget):
        idx = int(np.argmax(work))
        if work[idx] == -np.inf:
            break
        r, c = divmod(idx, w)
        picked.append((r, c))
        if suppression_k is None:
            work[idx] = -np.inf
        else:
            grid[max(0, r - half):r + half + 1, max(0, c - half):c + half + 1] = -np.inf
    return picked


@dataclass
class AnnotationResult:
    scores: np.ndarray
    coords: list  # [(row, col)] in selection order


def annotate(spec: AnnotatorSpec, probs: np.ndarray,
             tracker: ClassFrequencyTracker, rng: np.random.Generator,
             budget: int) -> AnnotationResult:
    """Score the frame with the configured annotator, optionally reweight for
    class imbalance, and pick up to ``budget`` pixels. The tracker is only
    read here; it is updated by the caller once the oracle has answered."""
    if spec.kind == "rand":
        scores = score_rand(probs.shape[:2], rng)
    elif spec.kind == "ent":
        scores = score_ent(probs)
    elif spec.kind == "ripu":
        scores = score_ripu(probs, spec.ripu_k)
    elif spec.kind == "bvsb":
        scores = score_bvsb(probs)
    else:  # pragma: no cover - spec validation rejects this earlier
        raise ConfigurationError(f"unknown annotator kind {spec.kind!r}")
    scores = apply_imbalance(scores, probs, tracker, spec.imbalance_mode,
                             spec.imbalance_omega)
    coords = select(scores, budget, spec.suppression_k)
    return AnnotationResult(scores=scores, coords=coords)
