"""PNG read/write helpers with the package's fixed conventions.

RGB frames are 8-bit PNG; depth exports are 16-bit millimeters with 0
meaning "no surface"; segmentation exports are 8-bit label ids with 0 as
background.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_png(path) -> np.ndarray:
    """(h, w, 3) uint8 RGB regardless of on-disk mode."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {image.dtype}")
    if image.ndim == 2:
        Image.fromarray(image, mode="L").save(path)
    elif image.ndim == 3 and image.shape[2] == 3:
        Image.fromarray(image, mode="RGB").save(path)
    else:
        raise ValueError(f"unsupported image shape {image.shape}")


def save_depth_png(path, depth_m: np.ndarray) -> None:
    """Depth in meters -> 16-bit millimeter PNG; non-finite becomes 0."""
    depth = np.asarray(depth_m, dtype=np.float64)
    mm = np.where(np.isfinite(depth), np.rint(depth * 1000.0), 0.0)
    mm = np.clip(mm, 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)  # uint16 -> 16-bit grayscale PNG


def load_depth_png(path) -> np.ndarray:
    """16-bit millimeter PNG -> meters, +inf where the file stored 0."""
    with Image.open(path) as im:
        mm = np.asarray(im, dtype=np.uint16).astype(np.float64)
    depth = mm / 1000.0
    depth[mm == 0] = np.inf
    return depth.astype(np.float32)


def save_label_png(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.max(initial=0) > 255 or labels.min(initial=0) < 0:
        raise ValueError("segmentation labels exceed the 8-bit PNG range")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def load_label_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).astype(np.int32)


def load_frame_dir(path) -> list[np.ndarray]:
    """All PNGs of a directory as RGB arrays, ordered by filename."""
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValueError(f"no .png frames found in {path}")
    return [load_png(p) for p in files]
