"""Task generators and data ingestion for the sequential-learning experiments.

Synthetic addition tasks follow the fixed-operand construction: task n pairs
the digit n with every digit 1..9 in both operand orders (18 samples, the
n+n pair appearing twice).  Binary problems are unrolled into per-bit
ripple-carry steps; decimal problems map digits affinely onto the spline
range.  Image experiments consume IDX-encoded files (the classic MNIST
layout) and reduce them to quantized, resized, flattened vectors.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, IdxFormatError, UsageError

__all__ = [
    "TaskMeta",
    "TaskDataset",
    "gen_binary_tasks",
    "gen_decimal_tasks",
    "task_operand_pairs",
    "ripple_carry_steps",
    "encode_digit",
    "decode_digit",
    "encode_carry",
    "decode_carry",
    "task_accuracy",
    "load_idx_images",
    "load_idx_labels",
    "load_mnist_idx",
    "ImagePreprocessSpec",
    "bilinear_resize",
    "preprocess_images",
    "intrinsic_dimension",
    "MNIST_CLASS_PLAN",
    "build_image_tasks",
    "task_to_csv",
]

BIT_COUNT = 4
TASK_DIGITS = (1, 2, 3, 4, 5)
PARTNER_DIGITS = tuple(range(1, 10))


@dataclass
class TaskMeta:
    kind: str  # "binary-add" | "decimal-add" | "image"
    intrinsic_dim: float | None = None
    pairs: list[tuple[int, int]] | None = None
    classes: tuple[int, ...] | None = None


@dataclass
class TaskDataset:
    task_index: int
    inputs: np.ndarray
    targets: np.ndarray  # float matrix for regression, int vector for labels
    meta: TaskMeta = field(default_factory=lambda: TaskMeta(kind="unknown"))

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.task_index < 1:
            raise UsageError(f"task_index must be >= 1, got {self.task_index}")
        if self.inputs.shape[0] != np.asarray(self.targets).shape[0]:
            raise UsageError("inputs and targets row counts differ")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def task_operand_pairs(n: int) -> list[tuple[int, int]]:
    """The 18 ordered operand pairs of task n: (n, d) then (d, n), d = 1..9."""
    return [(n, d) for d in PARTNER_DIGITS] + [(d, n) for d in PARTNER_DIGITS]


def ripple_carry_steps(a: int, b: int) -> list[tuple[int, int, int, int, int]]:
    """Integer-arithmetic unrolling: (bit_a, bit_b, carry_in, sum_bit, carry_out)
    per bit position, least significant first, initial carry 0."""
    steps = []
    carry = 0
    for pos in range(BIT_COUNT):
        bit_a = (a >> pos) & 1
        bit_b = (b >> pos) & 1
        total = bit_a + bit_b + carry
        steps.append((bit_a, bit_b, carry, total & 1, total >> 1))
        carry = total >> 1
    return steps


def gen_binary_tasks() -> list[TaskDataset]:
    """Five binary-addition tasks, each unrolled to 18 pairs x 4 bit steps.

    Inputs are (bit_a, bit_b, carry_in) in {0, 1}; targets are
    (sum_bit, carry_out).  Carries inside a sample come from the true
    ripple-carry chain.
    """
    tasks = []
    for n in TASK_DIGITS:
        pairs = task_operand_pairs(n)
        rows_in, rows_out = [], []
        for a, b in pairs:
            for bit_a, bit_b, carry_in, sum_bit, carry_out in ripple_carry_steps(a, b):
                rows_in.append((bit_a, bit_b, carry_in))
                rows_out.append((sum_bit, carry_out))
        tasks.append(
            TaskDataset(
                task_index=n,
                inputs=np.array(rows_in, dtype=np.float64),
                targets=np.array(rows_out, dtype=np.float64),
                meta=TaskMeta(kind="binary-add", pairs=pairs),
            )
        )
    return tasks


def encode_digit(d) -> np.ndarray:
    """Affine map of digits 0..9 onto [-1, 1]."""
    return np.asarray(d, dtype=np.float64) / 4.5 - 1.0


def decode_digit(v) -> np.ndarray:
    digits = np.rint((np.asarray(v, dtype=np.float64) + 1.0) * 4.5).astype(int)
    return np.clip(digits, 0, 9)


def encode_carry(c) -> np.ndarray:
    """Carry bit {0, 1} mapped to {-1, +1}."""
    return 2.0 * np.asarray(c, dtype=np.float64) - 1.0


def decode_carry(v) -> np.ndarray:
    return (np.asarray(v, dtype=np.float64) > 0.0).astype(int)


def gen_decimal_tasks() -> list[TaskDataset]:
    """Five decimal-addition tasks; targets are (sum mod 10, carry bit)."""
    tasks = []
    for n in TASK_DIGITS:
        pairs = task_operand_pairs(n)
        a = np.array([p[0] for p in pairs], dtype=np.float64)
        b = np.array([p[1] for p in pairs], dtype=np.float64)
        total = a + b
        inputs = np.column_stack([encode_digit(a), encode_digit(b)])
        targets = np.column_stack(
            [encode_digit(total % 10), encode_carry(total // 10)]
        )
        tasks.append(
            TaskDataset(
                task_index=n,
                inputs=inputs,
                targets=targets,
                meta=TaskMeta(kind="decimal-add", pairs=pairs),
            )
        )
    return tasks


def task_accuracy(task: TaskDataset, outputs: np.ndarray) -> float:
    """Fraction of samples predicted correctly under the task's decoding."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if outputs.shape[0] != task.n_samples:
        raise UsageError("outputs row count does not match task")
    kind = task.meta.kind
    if kind == "binary-add":
        predicted = outputs > 0.5
        wanted = task.targets > 0.5
        return float(np.mean(np.all(predicted == wanted, axis=1)))
    if kind == "decimal-add":
        digit_ok = decode_digit(outputs[:, 0]) == decode_digit(task.targets[:, 0])
        carry_ok = decode_carry(outputs[:, 1]) == decode_carry(task.targets[:, 1])
        return float(np.mean(digit_ok & carry_ok))
    if kind == "image":
        return float(np.mean(np.argmax(outputs, axis=1) == np.asarray(task.targets)))
    raise UsageError(f"no accuracy rule for task kind {kind!r}")


# --- IDX ingestion ----------------------------------------------------------

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


def _read_header(data: bytes, path, expected_magic: int, n_dims: int) -> tuple:
    header_len = 4 * (1 + n_dims)
    if len(data) < header_len:
        raise IdxFormatError(f"{path}: truncated header")
    fields = struct.unpack(f">{1 + n_dims}i", data[:header_len])
    if fields[0] != expected_magic:
        raise IdxFormatError(
            f"{path}: magic mismatch, expected {expected_magic}, got {fields[0]}"
        )
    return fields[1:], data[header_len:]


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file: magic 2051, then count/rows/cols, then bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    (count, rows, cols), payload = _read_header(data, path, IDX_IMAGE_MAGIC, 3)
    if min(count, rows, cols) < 0:
        raise IdxFormatError(f"{path}: negative dimension in header")
    expected = count * rows * cols
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: payload holds {len(payload)} bytes, header promises {expected}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Parse an IDX label file: magic 2049, then count, then label bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    (count,), payload = _read_header(data, path, IDX_LABEL_MAGIC, 1)
    if count < 0:
        raise IdxFormatError(f"{path}: negative count in header")
    if len(payload) != count:
        raise IdxFormatError(
            f"{path}: payload holds {len(payload)} labels, header promises {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8).copy()


def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load and pair an IDX image file with its label file."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return images, labels


# --- Image preprocessing ----------------------------------------------------


@dataclass(frozen=True)
class ImagePreprocessSpec:
    quantize_levels: int
    shape: tuple[int, int]

    def __post_init__(self) -> None:
        if self.quantize_levels < 2:
            raise UsageError("quantize_levels must be >= 2")
        if min(self.shape) < 1:
            raise UsageError(f"degenerate target shape {self.shape}")

    @property
    def pixel_count(self) -> int:
        return self.shape[0] * self.shape[1]


def bilinear_resize(images: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-center-aligned bilinear resize of a stack of 2-D images."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    new_h, new_w = shape
    if new_h == h and new_w == w:
        return images.copy()
    ys = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    xs = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = images[:, y0][:, :, x0] * (1 - wx) + images[:, y0][:, :, x1] * wx
    bottom = images[:, y1][:, :, x0] * (1 - wx) + images[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def preprocess_images(raw: np.ndarray, spec: ImagePreprocessSpec) -> np.ndarray:
    """Resize, quantize to Q uniform levels, rescale to [-1, 1], flatten."""
    raw = np.asarray(raw)
    if raw.ndim != 3:
        raise UsageError(f"expected stack of 2-D images, got shape {raw.shape}")
    resized = bilinear_resize(raw.astype(np.float64) / 255.0, spec.shape)
    q = spec.quantize_levels
    levels = np.minimum(np.floor(resized * q).astype(int), q - 1)
    values = levels / (q - 1) * 2.0 - 1.0
    return values.reshape(raw.shape[0], -1)


def intrinsic_dimension(spec: ImagePreprocessSpec) -> float:
    """log2(quantization levels x pixel count)."""
    return float(np.log2(spec.quantize_levels * spec.pixel_count))


MNIST_CLASS_PLAN: tuple[tuple[int, int], ...] = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 0))


def build_image_tasks(
    preprocessed: np.ndarray,
    labels: np.ndarray,
    class_plan=MNIST_CLASS_PLAN,
    n_per_class: int = 100,
    seed: int = 0,
) -> list[TaskDataset]:
    """Split preprocessed images into sequential tasks of disjoint classes.

    Labels are remapped to a shared head: class plan position defines the
    output index.  Sampling within a class is seeded and without
    replacement.
    """
    labels = np.asarray(labels).astype(int)
    flat_plan = [c for pair in class_plan for c in pair]
    if len(set(flat_plan)) != len(flat_plan):
        raise UsageError(f"class plan repeats a class: {class_plan}")
    head_index = {c: i for i, c in enumerate(flat_plan)}
    rng = np.random.default_rng(seed)
    tasks = []
    for t, classes in enumerate(class_plan, start=1):
        rows, mapped = [], []
        for c in classes:
            candidates = np.flatnonzero(labels == c)
            if candidates.shape[0] < n_per_class:
                raise DataError(
                    f"class {c} has only {candidates.shape[0]} samples, "
                    f"need {n_per_class}"
                )
            chosen = rng.choice(candidates, size=n_per_class, replace=False)
            rows.append(preprocessed[chosen])
            mapped.append(np.full(n_per_class, head_index[c], dtype=np.int64))
        tasks.append(
            TaskDataset(
                task_index=t,
                inputs=np.concatenate(rows, axis=0),
                targets=np.concatenate(mapped),
                meta=TaskMeta(kind="image", classes=tuple(classes)),
            )
        )
    return tasks


def task_to_csv(task: TaskDataset, path) -> None:
    """One row per sample: task_index, inputs..., targets..."""
    targets = np.atleast_2d(np.asarray(task.targets, dtype=np.float64))
    if targets.shape[0] == 1 and task.n_samples > 1:
        targets = targets.T
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["task_index"]
            + [f"input_{i}" for i in range(task.inputs.shape[1])]
            + [f"target_{i}" for i in range(targets.shape[1])]
        )
        for row_in, row_out in zip(task.inputs, targets):
            writer.writerow(
                [task.task_index]
                + [f"{v:.17g}" for v in row_in]
                + [f"{v:.17g}" for v in row_out]
            )
