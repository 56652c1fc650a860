"""Procedural 6-class shapes dataset: 32x32 RGB, deterministic per seed."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import load_ntf, save_ntf

CLASS_NAMES = ("circle", "square", "triangle", "ring", "cross", "stripes")
IMAGE_SIZE = 32


@dataclass
class LabeledImages:
    images: np.ndarray  # (N, 32, 32, 3) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: tuple = CLASS_NAMES

    def __len__(self):
        return len(self.images)


def _shape_mask(kind, rng):
    size = IMAGE_SIZE
    cy = rng.uniform(size * 0.35, size * 0.65)
    cx = rng.uniform(size * 0.35, size * 0.65)
    r = rng.uniform(6.0, 11.0)
    ys, xs = np.mgrid[0:size, 0:size]
    dy, dx = ys - cy, xs - cx
    d2 = dy * dy + dx * dx
    if kind == "circle":
        return d2 <= r * r
    if kind == "square":
        s = r * 0.85
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if kind == "triangle":
        # upward wedge: half-width grows linearly toward the base
        return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) * 0.55)
    if kind == "ring":
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "cross":
        t = max(1.5, r * 0.25)
        arm = (np.abs(dy) <= t) | (np.abs(dx) <= t)
        return arm & (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "stripes":
        period = rng.integers(4, 8)
        orient = rng.integers(0, 3)
        coord = {0: ys, 1: xs, 2: ys + xs}[int(orient)]
        return (coord // period) % 2 == 0
    raise ValueError(f"unknown shape kind {kind!r}")


def _render(kind, rng):
    bg = rng.uniform(0.0, 0.35, 3)
    fg = rng.uniform(0.6, 1.0, 3)
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3))
    img[:] = bg
    mask = _shape_mask(kind, rng)
    img[mask] = fg
    img += rng.normal(0.0, 0.04, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def gen_dataset(n_per_class, seed):
    """Balanced dataset: n_per_class images of each of the 6 classes."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label, kind in enumerate(CLASS_NAMES):
        for _ in range(n_per_class):
            images.append(_render(kind, rng))
            labels.append(label)
    order = rng.permutation(len(images))
    return LabeledImages(
        images=np.stack(images)[order],
        labels=np.asarray(labels, dtype=np.int64)[order],
    )


def save_dataset(dataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_ntf(directory / "images.ntf", dataset.images)
    meta = {
        "labels": dataset.labels.tolist(),
        "class_names": list(dataset.class_names),
    }
    (directory / "labels.json").write_text(json.dumps(meta, sort_keys=True))


def load_dataset(directory):
    directory = Path(directory)
    images = load_ntf(directory / "images.ntf")
    meta = json.loads((directory / "labels.json").read_text())
    return LabeledImages(
        images=images,
        labels=np.asarray(meta["labels"], dtype=np.int64),
        class_names=tuple(meta["class_names"]),
    )
