"""Synthetic semi-supervised / domain-shifted task generators.

Two tasks:

* ``two-moons`` -- 2-D point classification on two interleaving half-circle
  arcs with Gaussian noise. The unlabeled and eval splits can come from a
  rotated copy of the source distribution (``shift`` radians about the arcs'
  midpoint), which turns the SSL setting into a small domain-adaptation one.
* ``grid-seg`` -- single-channel H x W images containing random rectangles and
  discs of C-1 foreground classes over background, each class drawn at a
  characteristic intensity. The target domain (unlabeled + eval) adds a global
  intensity shift of the configured magnitude. Masks are exact by
  construction.

Every split records global provenance indices, and splits serialize to a flat
binary layout (see `save_split`) so batches can be replayed bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

TWO_MOONS = "two-moons"
GRID_SEG = "grid-seg"

_MAGIC = b"FSTD"
_VERSION = 1


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n_labeled: int
    n_unlabeled: int
    n_eval: int = 256
    noise: float = 0.08
    shift: float = 0.0
    class_weights: tuple[float, ...] | None = None
    seed: int = 0
    # two-moons: vertical offset of the second arc. The classic 0.5 makes the
    # arcs too interleaved for a linear probe; 0.1 keeps a slight interleave
    # while staying nearly linearly separable on noiseless draws.
    moon_gap: float = 0.1
    # grid-seg
    grid_hw: tuple[int, int] = (12, 12)
    num_classes: int = 3
    shapes_per_image: int = 3

    def __post_init__(self):
        if self.kind not in (TWO_MOONS, GRID_SEG):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.n_labeled < 1 or self.n_unlabeled < 1 or self.n_eval < 1:
            raise ValueError("all split sizes must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.kind == TWO_MOONS and self.n_labeled < 4:
            raise ValueError("two-moons needs at least 2 labeled points per class")
        if self.kind == GRID_SEG:
            h, w = self.grid_hw
            if self.num_classes < 2:
                raise ValueError("grid-seg needs at least 2 classes")
            if self.shapes_per_image < 0:
                raise ValueError("shapes_per_image must be >= 0")
            if self.shapes_per_image > 0 and min(h, w) < 6:
                raise ValueError(f"shapes cannot fit a {h}x{w} grid")
        if self.class_weights is not None:
            k = 2 if self.kind == TWO_MOONS else self.num_classes - 1
            if len(self.class_weights) != k or any(w <= 0 for w in self.class_weights):
                raise ValueError(f"class_weights must be {k} positive values")

    @property
    def eval_kind(self) -> str:
        """Headline evaluation statistic for this task."""
        return "accuracy" if self.kind == TWO_MOONS else "miou"


@dataclass(frozen=True)
class Split:
    inputs: np.ndarray  # (n, ...) float64
    labels: np.ndarray  # (n, ...) int64 ground truth (kept on unlabeled splits for metrics only)
    indices: np.ndarray  # (n,) int64 global provenance ids

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, positions: np.ndarray) -> "Split":
        pos = np.asarray(positions, dtype=np.int64)
        return Split(self.inputs[pos], self.labels[pos], self.indices[pos])

    def replay(self, global_ids: np.ndarray) -> "Split":
        """Rebuild a batch from provenance ids recorded earlier."""
        pos = np.searchsorted(self.indices, np.asarray(global_ids, dtype=np.int64))
        if not np.array_equal(self.indices[pos], global_ids):
            raise ValueError("provenance ids not found in this split")
        return self.take(pos)


@dataclass(frozen=True)
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class UnlabeledBatch:
    inputs: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TaskData:
    spec: TaskSpec
    labeled: Split
    unlabeled: Split
    eval: Split


def generate(spec: TaskSpec, split_seed: int | None = None) -> TaskData:
    if spec.kind == TWO_MOONS:
        return gen_two_moons(spec, split_seed)
    return gen_grid_seg(spec, split_seed)


# ---- two moons -------------------------------------------------------------


def _moon_points(rng, n: int, classes: np.ndarray, gap: float, noise: float) -> np.ndarray:
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(classes == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(classes == 0, np.sin(t), gap - np.sin(t))
    pts = np.stack([x, y], axis=1)
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    return pts


def _rotate(pts: np.ndarray, angle: float, center: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return (pts - center) @ rot.T + center


def gen_two_moons(spec: TaskSpec, split_seed: int | None = None) -> TaskData:
    """Labeled split from the source arcs; unlabeled and eval from the
    (optionally rotated) target copy."""
    if spec.kind != TWO_MOONS:
        raise ValueError("spec is not a two-moons task")
    rng = np.random.default_rng(spec.seed if split_seed is None else split_seed)
    w = spec.class_weights or (1.0, 1.0)
    p1 = w[1] / (w[0] + w[1])
    center = np.array([0.5, spec.moon_gap / 2.0])

    n_l = spec.n_labeled
    lab_classes = np.repeat(np.arange(2), (n_l - n_l // 2, n_l // 2)).astype(np.int64)
    lab_pts = _moon_points(rng, n_l, lab_classes, spec.moon_gap, spec.noise)

    def target_split(n: int, offset: int) -> Split:
        cls = (rng.uniform(size=n) < p1).astype(np.int64)
        pts = _moon_points(rng, n, cls, spec.moon_gap, spec.noise)
        if spec.shift != 0.0:
            pts = _rotate(pts, spec.shift, center)
        return Split(pts, cls, np.arange(offset, offset + n, dtype=np.int64))

    labeled = Split(lab_pts, lab_classes, np.arange(n_l, dtype=np.int64))
    unlabeled = target_split(spec.n_unlabeled, n_l)
    holdout = target_split(spec.n_eval, n_l + spec.n_unlabeled)
    return TaskData(spec, labeled, unlabeled, holdout)


# ---- grid segmentation -------------------------------------------------------


def class_intensity(num_classes: int) -> np.ndarray:
    """Characteristic intensity per class id; background is class 0."""
    return 0.1 + 0.8 * np.arange(num_classes) / (num_classes - 1)


def _paint_image(rng, spec: TaskSpec, fg_p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.grid_hw
    mask = np.zeros((h, w), dtype=np.int64)
    for _ in range(spec.shapes_per_image):
        cls = 1 + rng.choice(spec.num_classes - 1, p=fg_p)
        if rng.uniform() < 0.5:
            sh = int(rng.integers(2, max(3, min(h, w) // 2) + 1))
            sw = int(rng.integers(2, max(3, min(h, w) // 2) + 1))
            r0 = int(rng.integers(0, h - sh + 1))
            c0 = int(rng.integers(0, w - sw + 1))
            mask[r0 : r0 + sh, c0 : c0 + sw] = cls
        else:
            rad = int(rng.integers(1, max(2, min(h, w) // 4) + 1))
            cy = int(rng.integers(rad, h - rad))
            cx = int(rng.integers(rad, w - rad))
            yy, xx = np.ogrid[:h, :w]
            mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad] = cls
    img = class_intensity(spec.num_classes)[mask]
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    return img[..., None], mask


def gen_grid_seg(spec: TaskSpec, split_seed: int | None = None) -> TaskData:
    if spec.kind != GRID_SEG:
        raise ValueError("spec is not a grid-seg task")
    rng = np.random.default_rng(spec.seed if split_seed is None else split_seed)
    w = spec.class_weights or tuple([1.0] * (spec.num_classes - 1))
    fg_p = np.asarray(w, dtype=np.float64)
    fg_p = fg_p / fg_p.sum()

    def draw_split(n: int, offset: int, shifted: bool) -> Split:
        imgs, masks = [], []
        for _ in range(n):
            img, msk = _paint_image(rng, spec, fg_p)
            if shifted:
                img = img + spec.shift
            imgs.append(img)
            masks.append(msk)
        return Split(
            np.stack(imgs),
            np.stack(masks),
            np.arange(offset, offset + n, dtype=np.int64),
        )

    labeled = draw_split(spec.n_labeled, 0, shifted=False)
    unlabeled = draw_split(spec.n_unlabeled, spec.n_labeled, shifted=True)
    holdout = draw_split(spec.n_eval, spec.n_labeled + spec.n_unlabeled, shifted=True)
    return TaskData(spec, labeled, unlabeled, holdout)


# ---- mixing augmentation -----------------------------------------------------


def apply_class_mix(
    src_input: np.ndarray,
    src_labels: np.ndarray,
    tgt_input: np.ndarray,
    tgt_pseudo_labels: np.ndarray,
    classes: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Paste the pixels of the given source classes onto the target image.

    Returns (mixed input, mixed label map, paste mask). The mixed labels take
    source ground truth on pasted pixels and the target pseudo-labels
    elsewhere. An empty class selection is the identity.
    """
    if src_input.shape[:2] != tgt_input.shape[:2]:
        raise ValueError("source and target images must share H x W")
    if not classes:
        return tgt_input.copy(), np.asarray(tgt_pseudo_labels, dtype=np.int64).copy(), np.zeros(src_labels.shape, dtype=np.float64)
    paste = np.isin(src_labels, np.asarray(classes))
    mixed = np.where(paste[..., None], src_input, tgt_input)
    mixed_labels = np.where(paste, src_labels, tgt_pseudo_labels).astype(np.int64)
    return mixed, mixed_labels, paste.astype(np.float64)


def select_mix_classes(src_labels: np.ndarray, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniformly pick ceil(present / 2) of the classes present in the source."""
    present = np.unique(src_labels)
    n_sel = (len(present) + 1) // 2
    sel = rng.choice(present, size=n_sel, replace=False)
    return tuple(int(c) for c in np.sort(sel))


def class_mix(
    src_input: np.ndarray,
    src_labels: np.ndarray,
    tgt_input: np.ndarray,
    tgt_pseudo_labels: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    classes = select_mix_classes(src_labels, rng)
    return apply_class_mix(src_input, src_labels, tgt_input, tgt_pseudo_labels, classes)


# ---- serialization -----------------------------------------------------------
#
# Layout (little endian):
#   magic "FSTD" | u32 version | u32 n_items
#   u32 input_ndim  | u32 * input per-item dims
#   u32 label_ndim  | u32 * label per-item dims   (0 dims = scalar labels)
#   float64 inputs, row major (n_items x prod(input dims))
#   int32   labels            (n_items x prod(label dims))
#   int64   provenance indices (n_items)


def save_split(path, split: Split) -> None:
    in_dims = split.inputs.shape[1:]
    lab_dims = split.labels.shape[1:]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(split)))
        f.write(struct.pack(f"<I{len(in_dims)}I", len(in_dims), *in_dims))
        f.write(struct.pack(f"<I{len(lab_dims)}I", len(lab_dims), *lab_dims))
        f.write(np.ascontiguousarray(split.inputs, dtype=np.float64).tobytes())
        f.write(np.ascontiguousarray(split.labels, dtype=np.int32).tobytes())
        f.write(np.ascontiguousarray(split.indices, dtype=np.int64).tobytes())


def load_split(path) -> Split:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        version, n = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (in_nd,) = struct.unpack("<I", f.read(4))
        in_dims = struct.unpack(f"<{in_nd}I", f.read(4 * in_nd)) if in_nd else ()
        (lab_nd,) = struct.unpack("<I", f.read(4))
        lab_dims = struct.unpack(f"<{lab_nd}I", f.read(4 * lab_nd)) if lab_nd else ()
        n_in = n * int(np.prod(in_dims)) if in_dims else n
        n_lab = n * int(np.prod(lab_dims)) if lab_dims else n
        inputs = np.frombuffer(f.read(8 * n_in), dtype="<f8").reshape((n, *in_dims)).copy()
        labels = np.frombuffer(f.read(4 * n_lab), dtype="<i4").astype(np.int64).reshape((n, *lab_dims))
        indices = np.frombuffer(f.read(8 * n), dtype="<i8").copy()
    return Split(inputs, labels, indices)


def save_task_data(directory, data: TaskData) -> None:
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_split(d / "labeled.bin", data.labeled)
    save_split(d / "unlabeled.bin", data.unlabeled)
    save_split(d / "eval.bin", data.eval)


def load_task_data(directory, spec: TaskSpec) -> TaskData:
    from pathlib import Path

    d = Path(directory)
    return TaskData(
        spec,
        load_split(d / "labeled.bin"),
        load_split(d / "unlabeled.bin"),
        load_split(d / "eval.bin"),
    )
