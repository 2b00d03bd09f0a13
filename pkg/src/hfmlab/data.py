"""IDX dataset ingestion and construction of the breadth ladder.

The ladder holds three equally sized binary datasets of increasing domain
diversity: narrow (one class, augmented), medium (all digit classes) and
broad (digits plus letters, or a mirror proxy when no letters are given).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MAX_ROTATION_DEG = 15.0
MAX_SHIFT_PX = 2


class IdxFormatError(ValueError):
    pass


def load_idx(images_path, labels_path):
    """Parse big-endian IDX image/label files; returns (images, labels).

    Images come back as a uint8 array of shape (N, rows, cols).
    """
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise IdxFormatError("truncated image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"bad image magic 0x{magic:08x}")
        payload = fh.read(count * rows * cols)
        if len(payload) < count * rows * cols:
            raise IdxFormatError("truncated image payload")
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise IdxFormatError("truncated label header")
        magic, n_labels = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"bad label magic 0x{magic:08x}")
        payload = fh.read(n_labels)
        if len(payload) < n_labels:
            raise IdxFormatError("truncated label payload")
        labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if len(labels) != count:
        raise IdxFormatError(f"{count} images but {len(labels)} labels")
    return images, labels


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Inverse of load_idx; used to build fixtures and synthetic corpora."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, count))
        fh.write(labels.tobytes())


@dataclass
class Dataset:
    """Binary image rows plus labels and a full provenance record."""

    images: np.ndarray  # (N, m) of {0, 1}
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 2 or len(self.images) == 0:
            raise ValueError("images must be a non-empty N x m matrix")
        if not np.isin(self.images, (0, 1)).all():
            raise ValueError("dataset entries must be binary")
        if len(self.labels) != len(self.images):
            raise ValueError("label count mismatch")


def preprocess(raw_images: np.ndarray, labels: np.ndarray, downsample: int = 2, threshold: float = 0.5) -> Dataset:
    """Block-average downsampling followed by binarization at `threshold`.

    The threshold is a fraction of full intensity (255).
    """
    raw_images = np.asarray(raw_images)
    _, rows, cols = raw_images.shape
    if downsample < 1 or rows % downsample or cols % downsample:
        raise ValueError(f"downsample factor {downsample} does not divide {rows}x{cols}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    r, c = rows // downsample, cols // downsample
    blocks = raw_images.reshape(len(raw_images), r, downsample, c, downsample).mean(axis=(2, 4))
    binary = (blocks / 255.0 > threshold).astype(np.uint8).reshape(len(raw_images), r * c)
    return Dataset(
        binary,
        np.asarray(labels),
        provenance={"downsample": downsample, "threshold": threshold, "image_shape": [r, c]},
    )


def _augment(images: np.ndarray, labels: np.ndarray, target: int, rng: np.random.Generator):
    """Pad a class up to `target` with small rotations and translations."""
    out_imgs = [images]
    out_labels = [labels]
    have = len(images)
    while have < target:
        take = min(len(images), target - have)
        pick = rng.choice(len(images), size=take, replace=False)
        batch = []
        for img in images[pick]:
            angle = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
            dy, dx = rng.integers(-MAX_SHIFT_PX, MAX_SHIFT_PX + 1, size=2)
            rotated = ndimage.rotate(img.astype(np.float64), angle, reshape=False, order=1)
            shifted = ndimage.shift(rotated, (dy, dx), order=0, cval=0.0)
            batch.append(np.clip(shifted, 0, 255).astype(np.uint8))
        out_imgs.append(np.stack(batch))
        out_labels.append(labels[pick])
        have += take
    return np.concatenate(out_imgs), np.concatenate(out_labels)


def _fit_to_size(images, labels, target: int, rng: np.random.Generator):
    if len(images) >= target:
        pick = rng.choice(len(images), size=target, replace=False)
        return images[pick], labels[pick]
    return _augment(images, labels, target, rng)


def synthetic_glyphs(n_classes: int, per_class: int, seed: int, size: int = 28):
    """Procedural glyph corpus for fixtures and offline runs.

    Each class is a fixed coarse 7x7 blob upscaled to `size`, with
    per-sample rotation, shift and pixel jitter. Returns (images, labels)
    in the same layout as load_idx.
    """
    if size % 7:
        raise ValueError("size must be a multiple of 7")
    rng = np.random.default_rng(seed)
    scale = size // 7
    templates = []
    for c in range(n_classes):
        t_rng = np.random.default_rng(1000 + c)
        # sparse seeds keep the dilated blobs well below full coverage, so
        # classes differ in bulk ink placement rather than only at the edges
        blob = (t_rng.random((7, 7)) < 0.12).astype(np.float64)
        blob = ndimage.binary_dilation(blob).astype(np.float64)
        templates.append(np.kron(blob, np.ones((scale, scale))) * 255.0)
    images = np.zeros((n_classes * per_class, size, size), dtype=np.uint8)
    labels = np.zeros(n_classes * per_class, dtype=np.int64)
    row = 0
    for c, template in enumerate(templates):
        for _ in range(per_class):
            angle = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
            dy, dx = rng.integers(-MAX_SHIFT_PX, MAX_SHIFT_PX + 1, size=2)
            img = ndimage.rotate(template, angle, reshape=False, order=1)
            img = ndimage.shift(img, (dy, dx), order=0, cval=0.0)
            img *= rng.uniform(0.7, 1.0)
            img += rng.normal(0.0, 12.0, img.shape)
            images[row] = np.clip(img, 0, 255).astype(np.uint8)
            labels[row] = c
            row += 1
    return images, labels


def breadth_ladder(
    digit_images: np.ndarray,
    digit_labels: np.ndarray,
    target_size: int,
    seed: int,
    letter_images=None,
    letter_labels=None,
    narrow_class: int = 2,
    downsample: int = 2,
    threshold: float = 0.5,
):
    """Build the (narrow, medium, broad) datasets at equal size.

    Narrow keeps a single digit class augmented by label-preserving
    rotations and translations; medium uses all digits; broad adds letters
    when available, otherwise mirror-reflected digits (flagged in
    provenance). Deterministic given the seed.
    """
    if len(digit_images) == 0:
        raise ValueError("no digit data")
    rng = np.random.default_rng(seed)

    mask = digit_labels == narrow_class
    if not mask.any():
        raise ValueError(f"no samples of class {narrow_class}")
    narrow_imgs, narrow_lbls = _fit_to_size(digit_images[mask], digit_labels[mask], target_size, rng)

    medium_imgs, medium_lbls = _fit_to_size(digit_images, digit_labels, target_size, rng)

    if letter_images is not None and len(letter_images):
        pool_imgs = np.concatenate([digit_images, letter_images])
        pool_lbls = np.concatenate([digit_labels, np.asarray(letter_labels) + 10])
        broad_source = "letters"
    else:
        mirrored = digit_images[:, :, ::-1]
        pool_imgs = np.concatenate([digit_images, mirrored])
        pool_lbls = np.concatenate([digit_labels, digit_labels + 10])
        broad_source = "mirror-proxy"
    broad_imgs, broad_lbls = _fit_to_size(pool_imgs, pool_lbls, target_size, rng)

    datasets = []
    for name, imgs, lbls in (
        ("narrow", narrow_imgs, narrow_lbls),
        ("medium", medium_imgs, medium_lbls),
        ("broad", broad_imgs, broad_lbls),
    ):
        ds = preprocess(imgs, lbls, downsample, threshold)
        ds.provenance.update(
            {
                "ladder": name,
                "seed": seed,
                "target_size": target_size,
                "narrow_class": narrow_class,
                "broad_source": broad_source,
                "augment": {"rotation_deg": MAX_ROTATION_DEG, "shift_px": MAX_SHIFT_PX},
                "class_counts": {int(k): int(v) for k, v in zip(*np.unique(lbls, return_counts=True))},
            }
        )
        datasets.append(ds)
    return tuple(datasets)
