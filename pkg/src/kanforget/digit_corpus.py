"""Procedurally rendered digit images in the IDX container format.

The image experiments normally consume user-supplied MNIST IDX files.  For
offline environments this module renders a deterministic stand-in corpus:
digits drawn with a bundled font under randomized affine jitter, written
through the same IDX layout the real files use, so the entire ingestion
and preprocessing path is exercised unchanged.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .tasks import IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC

__all__ = [
    "render_digit_images",
    "write_idx_images",
    "write_idx_labels",
    "ensure_synthetic_corpus",
]

_SIZE = 28


def _render_one(digit: int, rng: np.random.Generator) -> np.ndarray:
    font_size = int(rng.integers(16, 23))
    font = ImageFont.load_default(size=font_size)
    canvas = Image.new("L", (_SIZE * 2, _SIZE * 2), 0)
    draw = ImageDraw.Draw(canvas)
    draw.text((_SIZE, _SIZE), str(digit), fill=255, font=font, anchor="mm")
    angle = float(rng.uniform(-20.0, 20.0))
    canvas = canvas.rotate(angle, resample=Image.BILINEAR, center=(_SIZE, _SIZE))
    dx = int(rng.integers(-3, 4))
    dy = int(rng.integers(-3, 4))
    left = _SIZE // 2 + dx
    top = _SIZE // 2 + dy
    crop = canvas.crop((left, top, left + _SIZE, top + _SIZE))
    return np.asarray(crop, dtype=np.uint8)


def render_digit_images(
    n_per_class: int, seed: int = 1234
) -> tuple[np.ndarray, np.ndarray]:
    """Render ``n_per_class`` jittered samples of each digit 0..9.

    Returns uint8 images of shape (10 * n_per_class, 28, 28) and their
    labels, shuffled deterministically.
    """
    rng = np.random.default_rng(seed)
    images = np.empty((10 * n_per_class, _SIZE, _SIZE), dtype=np.uint8)
    labels = np.empty(10 * n_per_class, dtype=np.uint8)
    idx = 0
    for digit in range(10):
        for _ in range(n_per_class):
            images[idx] = _render_one(digit, rng)
            labels[idx] = digit
            idx += 1
    order = rng.permutation(images.shape[0])
    return images[order], labels[order]


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4i", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2i", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def ensure_synthetic_corpus(
    directory, n_per_class: int = 400, seed: int = 1234
) -> tuple[Path, Path]:
    """Write (or reuse) the stand-in corpus under ``directory``.

    Returns the image and label file paths in IDX format.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images_path = directory / "synthetic-digits-images-idx3-ubyte"
    labels_path = directory / "synthetic-digits-labels-idx1-ubyte"
    if not (images_path.exists() and labels_path.exists()):
        images, labels = render_digit_images(n_per_class, seed=seed)
        write_idx_images(images_path, images)
        write_idx_labels(labels_path, labels)
    return images_path, labels_path
