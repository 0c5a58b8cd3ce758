"""Procedural scenes, the corruption suite, test-stream construction and
file persistence (datasets, checkpoints, per-frame CSV, summaries).

Scenes are colored geometric objects on a textured background with
pixel-accurate labels. Corruptions degrade the image only, never the label
map. All generation is deterministic given (spec, seed): per-frame seeds are
derived through ``numpy.random.SeedSequence``.

Images are kept on the 8-bit grid (multiples of 1/255) so the PNG round trip
is value-exact.
"""

from __future__ import annotations

import colorsys
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import numerics
from .errors import CheckpointError, ConfigurationError

CHECKPOINT_FORMAT = "ataseg-ckpt-v1"
DATASET_FORMAT = "ataseg-dataset-v1"
FRAMES_CSV_FORMAT = "ataseg-frames-v1"

CORRUPTION_KINDS = ("gaussian_noise", "brightness", "contrast", "blur", "pixelate")

# Severity scaling constants. Gaussian noise sigma grows 0.04 per level; the
# rest are calibrated so the frozen source model lands at 35-75% of its clean
# mIoU at severity 5 (see tests/test_streamlab.py).
NOISE_SIGMA_PER_SEV = 0.04
BRIGHTNESS_PER_SEV = 0.042
CONTRAST_DROP_PER_SEV = 0.10
BLUR_SIGMA_PER_SEV = 0.60
PIXELATE_BLOCKS = {1: 2, 2: 3, 3: 4, 4: 6, 5: 8}


def _quantize8(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and snap to the 256-level grid."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _derived_seed(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])


@dataclass
class Scene:
    image: np.ndarray   # (H, W, 3) float64 in [0, 1], on the 8-bit grid
    labels: np.ndarray  # (H, W) int64 class ids
    seed: int


def class_palette(num_classes: int) -> np.ndarray:
    """Base color per class: muted olive background and moderately saturated
    hues for the object classes. Kept deliberately close together so the
    corruption suite produces real headroom for adaptation."""
    colors = np.empty((num_classes, 3))
    colors[0] = colorsys.hsv_to_rgb(0.25, 0.15, 0.40)
    for c in range(1, num_classes):
        hue = (c - 1) / (num_classes - 1)
        colors[c] = colorsys.hsv_to_rgb(hue, 0.35, 0.55)
    return colors


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency color texture plus a little per-pixel grain."""
    coarse = rng.normal(0.0, 1.0, (h // 8 + 2, w // 8 + 2, 3))
    smooth = ndimage.zoom(coarse, (8, 8, 1), order=1)[:h, :w]
    grain = rng.normal(0.0, 1.0, (h, w, 3))
    return 0.015 * smooth + 0.008 * grain


def _object_mask(rng: np.random.Generator, kind: str, h: int, w: int) -> np.ndarray:
    ii, jj = np.indices((h, w))
    cy = int(rng.integers(6, h - 6))
    cx = int(rng.integers(6, w - 6))
    if kind == "rect":
        a = int(rng.integers(3, max(4, h // 5)))
        b = int(rng.integers(3, max(4, w // 5)))
        return (np.abs(ii - cy) <= a) & (np.abs(jj - cx) <= b)
    if kind == "disk":
        r = int(rng.integers(3, max(4, min(h, w) // 5)))
        return (ii - cy) ** 2 + (jj - cx) ** 2 <= r * r
    # isoceles triangle, apex up
    ht = int(rng.integers(6, max(7, h // 3)))
    hw = int(rng.integers(4, max(5, w // 4)))
    di = ii - cy
    return (di >= 0) & (di <= ht) & (np.abs(jj - cx) * ht <= hw * di)


def gen_scene(num_classes: int, h: int, w: int, seed: int) -> Scene:
    """One labeled scene: textured background (class 0) plus 3-8 geometric
    objects whose label regions never overlap."""
    if num_classes < 3:
        raise ConfigurationError("scene generation needs at least 3 classes")
    if h < 16 or w < 16:
        raise ConfigurationError("scene size must be at least 16 x 16")
    rng = np.random.default_rng(seed)
    palette = class_palette(num_classes)
    jitter = rng.normal(0.0, 0.015, (num_classes, 3))
    colors = np.clip(palette + jitter, 0.0, 1.0)

    labels = np.zeros((h, w), dtype=np.int64)
    image = np.empty((h, w, 3))
    image[:] = colors[0]

    n_objects = int(rng.integers(3, 9))
    for _ in range(n_objects):
        for _attempt in range(4):
            kind = ("rect", "disk", "tri")[int(rng.integers(0, 3))]
            cls = int(rng.integers(1, num_classes))
            mask = _object_mask(rng, kind, h, w) & (labels == 0)
            if mask.sum() >= 12:
                labels[mask] = cls
                image[mask] = colors[cls]
                break

    image = _quantize8(image + _texture(rng, h, w))
    return Scene(image=image, labels=labels, seed=seed)


def make_source_dataset(count: int, num_classes: int, h: int, w: int,
                        seed: int) -> list:
    """Clean labeled scenes for source training / held-out evaluation."""
    return [gen_scene(num_classes, h, w, _derived_seed(seed, 11, i))
            for i in range(count)]


# ---------------------------------------------------------------------------
# corruptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigurationError(f"unknown corruption kind {self.kind!r}")
        if not isinstance(self.severity, int) or not 1 <= self.severity <= 5:
            raise ConfigurationError("severity must be an integer in [1, 5]")


def _pixelate(img: np.ndarray, block: int) -> np.ndarray:
    h, w, _ = img.shape
    r_edges = np.arange(0, h, block)
    c_edges = np.arange(0, w, block)
    sums = np.add.reduceat(np.add.reduceat(img, r_edges, axis=0), c_edges, axis=1)
    r_sizes = np.diff(np.append(r_edges, h))
    c_sizes = np.diff(np.append(c_edges, w))
    means = sums / (r_sizes[:, None, None] * c_sizes[None, :, None])
    return np.repeat(np.repeat(means, r_sizes, axis=0), c_sizes, axis=1)


def corrupt(image: np.ndarray, spec: CorruptionSpec,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Label-preserving photometric/spatial degradation of one image."""
    sev = spec.severity
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.kind == "gaussian_noise":
        out = image + rng.normal(0.0, NOISE_SIGMA_PER_SEV * sev, image.shape)
    elif spec.kind == "brightness":
        out = image + BRIGHTNESS_PER_SEV * sev
    elif spec.kind == "contrast":
        mean = image.mean()
        out = mean + (image - mean) * (1.0 - CONTRAST_DROP_PER_SEV * sev)
    elif spec.kind == "blur":
        sigma = BLUR_SIGMA_PER_SEV * sev
        out = ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0.0), mode="nearest")
    elif spec.kind == "pixelate":
        out = _pixelate(image, PIXELATE_BLOCKS[sev])
    else:  # pragma: no cover - CorruptionSpec validates on construction
        raise ConfigurationError(f"unknown corruption kind {spec.kind!r}")
    return _quantize8(out)


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StreamSegment:
    corruption: CorruptionSpec
    frames: int


@dataclass(frozen=True)
class StreamSpec:
    protocol: str                 # "ftta" or "ctta"
    segments: tuple
    height: int = 48
    width: int = 48
    num_classes: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("ftta", "ctta"):
            raise ConfigurationError(f"unknown protocol {self.protocol!r}")
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.protocol == "ftta" and len(self.segments) != 1:
            raise ConfigurationError("FTTA streams have exactly one segment")
        if self.protocol == "ctta" and len(self.segments) < 2:
            raise ConfigurationError("CTTA streams need at least two segments")
        if any(seg.frames < 1 for seg in self.segments):
            raise ConfigurationError("every segment needs at least one frame")

    @property
    def total_frames(self) -> int:
        return sum(seg.frames for seg in self.segments)

    def domain_ids(self) -> np.ndarray:
        """Segment index of every frame, in stream order."""
        return np.repeat(np.arange(len(self.segments)),
                         [seg.frames for seg in self.segments])


def build_stream(spec: StreamSpec) -> list:
    """Generate all frames of a stream: a fresh scene per frame, corrupted
    according to its segment. Deterministic in (spec, spec.seed)."""
    scenes = []
    frame = 0
    for seg in spec.segments:
        for _ in range(seg.frames):
            scene = gen_scene(spec.num_classes, spec.height, spec.width,
                              _derived_seed(spec.seed, 101, frame))
            noise_rng = np.random.default_rng(
                _derived_seed(spec.seed, 202, frame, seg.corruption.seed))
            img = corrupt(scene.image, seg.corruption, rng=noise_rng)
            scenes.append(Scene(image=img, labels=scene.labels, seed=scene.seed))
            frame += 1
    return scenes


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_checkpoint(path, net, adam_state) -> None:
    layers = [{"kernel": s.kernel, "in_ch": s.in_ch, "out_ch": s.out_ch,
               "activated": s.activated} for s in net.layers]
    meta = {"step_count": adam_state.step_count, "lr": adam_state.lr,
            "beta1": adam_state.beta1, "beta2": adam_state.beta2,
            "eps": adam_state.eps}
    np.savez(path,
             format_tag=np.array(CHECKPOINT_FORMAT),
             layers_json=np.array(json.dumps(layers)),
             params=net.params,
             adam_m=adam_state.m,
             adam_v=adam_state.v,
             adam_meta=np.array(json.dumps(meta)))


def load_checkpoint(path):
    """Load (net, adam_state); refuses files with a wrong or missing tag."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format_tag" not in data:
                raise CheckpointError(f"{path}: not a checkpoint (missing format tag)")
            tag = str(data["format_tag"])
            if tag != CHECKPOINT_FORMAT:
                raise CheckpointError(
                    f"{path}: format tag {tag!r} does not match {CHECKPOINT_FORMAT!r}")
            layers = [numerics.ConvSpec(**d) for d in json.loads(str(data["layers_json"]))]
            net = numerics.SegNet(layers, params=data["params"])
            meta = json.loads(str(data["adam_meta"]))
            state = numerics.AdamState(
                m=data["adam_m"].copy(), v=data["adam_v"].copy(),
                step_count=int(meta["step_count"]), lr=float(meta["lr"]),
                beta1=float(meta["beta1"]), beta2=float(meta["beta2"]),
                eps=float(meta["eps"]))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return net, state


def _image_to_u8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_dataset(directory, scenes, num_classes: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(scenes):
        Image.fromarray(_image_to_u8(scene.image), mode="RGB").save(
            directory / f"frame_{i:05d}.png")
        Image.fromarray(scene.labels.astype(np.uint8), mode="L").save(
            directory / f"frame_{i:05d}_labels.png")
    h, w = scenes[0].labels.shape if scenes else (0, 0)
    manifest = {"format_version": DATASET_FORMAT, "count": len(scenes),
                "num_classes": num_classes, "height": h, "width": w,
                "seeds": [s.seed for s in scenes]}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(directory) -> list:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"{directory}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != DATASET_FORMAT:
        raise CheckpointError(
            f"{directory}: dataset format {manifest.get('format_version')!r} "
            f"does not match {DATASET_FORMAT!r}")
    scenes = []
    for i in range(manifest["count"]):
        img = np.asarray(Image.open(directory / f"frame_{i:05d}.png"),
                         dtype=np.float64) / 255.0
        labels = np.asarray(Image.open(directory / f"frame_{i:05d}_labels.png"),
                            dtype=np.int64)
        scenes.append(Scene(image=img, labels=labels, seed=manifest["seeds"][i]))
    return scenes


FRAME_CSV_COLUMNS = ["frame", "domain", "ce", "ce_aug", "ent", "cst", "total",
                     "selected_pixels", "miou_cum", "miou_domain",
                     "format_version"]


def write_frames_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FRAME_CSV_COLUMNS)
        writer.writeheader()
        for rec in records:
            selected = ";".join(f"{r}:{c}:{k}" for r, c, k in rec.selected.entries)
            writer.writerow({
                "frame": rec.frame_id,
                "domain": rec.domain_id,
                "ce": repr(rec.losses.ce),
                "ce_aug": repr(rec.losses.ce_aug),
                "ent": repr(rec.losses.ent),
                "cst": repr(rec.losses.cst),
                "total": repr(rec.losses.total),
                "selected_pixels": selected,
                "miou_cum": repr(rec.miou_cum),
                "miou_domain": repr(rec.miou_domain),
                "format_version": FRAMES_CSV_FORMAT,
            })


def read_frames_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["format_version"] != FRAMES_CSV_FORMAT:
                raise CheckpointError(f"{path}: unexpected frames CSV format")
            row["frame"] = int(row["frame"])
            row["domain"] = int(row["domain"])
            for key in ("ce", "ce_aug", "ent", "cst", "total",
                        "miou_cum", "miou_domain"):
                row[key] = float(row[key])
            row["selected_pixels"] = [
                tuple(int(x) for x in item.split(":"))
                for item in row["selected_pixels"].split(";") if item
            ]
            rows.append(row)
    return rows
