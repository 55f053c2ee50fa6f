"""Mesh-derived backward motion flow, warping and compositing operators.

Because face identity persists over time, motion needs no pixel matching:
a face visible in consecutive face buffers moved by the displacement of its
representative image position. The flow field lives on the later frame and
points backward, so frames are synthesized by pulling from the previous one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .raster import NONE_ID, FaceBuffer

FLO_MAGIC = b"FLO1"


@dataclass
class FlowField:
    """Per-pixel backward motion vectors with a validity mask.

    ``vectors[y, x]`` is (dx, dy) in pixels; zero wherever ``valid`` is 0.
    Valid pixels are a subset of the later frame's foreground.
    """

    vectors: np.ndarray   # (h, w, 2) float32
    valid: np.ndarray     # (h, w) uint8

    def __post_init__(self):
        if self.vectors.shape[:2] != self.valid.shape or self.vectors.shape[2] != 2:
            raise ValueError("flow vector/validity shape mismatch")

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    def save(self, path) -> None:
        h, w = self.valid.shape
        with open(path, "wb") as fh:
            fh.write(FLO_MAGIC)
            fh.write(struct.pack("<II", w, h))
            fh.write(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.valid, dtype=np.uint8).tobytes())

    @classmethod
    def load(cls, path) -> "FlowField":
        with open(path, "rb") as fh:
            magic = fh.read(len(FLO_MAGIC))
            if magic != FLO_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC!r}")
            w, h = struct.unpack("<II", fh.read(8))
            vec_raw = fh.read(w * h * 2 * 4)
            val_raw = fh.read(w * h)
            if len(vec_raw) != w * h * 8 or len(val_raw) != w * h:
                raise ValueError(f"{path}: truncated flow file")
        vectors = np.frombuffer(vec_raw, dtype="<f4").reshape(h, w, 2).copy()
        valid = np.frombuffer(val_raw, dtype=np.uint8).reshape(h, w).copy()
        return cls(vectors, valid)


def _representative_positions(buf: FaceBuffer) -> tuple[np.ndarray, np.ndarray]:
    """Rounded pixel centroid of every visible face: (max_id+1, 2) + seen mask."""
    fg = buf.face_id != NONE_ID
    ys, xs = np.nonzero(fg)
    ids = buf.face_id[ys, xs]
    size = int(ids.max()) + 1 if len(ids) else 0
    counts = np.bincount(ids, minlength=size).astype(np.float64)
    sum_x = np.bincount(ids, weights=xs, minlength=size)
    sum_y = np.bincount(ids, weights=ys, minlength=size)
    seen = counts > 0
    rep = np.zeros((size, 2), dtype=np.int64)
    # round half up: centroids are non-negative, so floor(c + .5) is stable
    rep[seen, 0] = np.floor(sum_x[seen] / counts[seen] + 0.5).astype(np.int64)
    rep[seen, 1] = np.floor(sum_y[seen] / counts[seen] + 0.5).astype(np.int64)
    return rep, seen


def flow_between(buf_t: FaceBuffer, buf_t1: FaceBuffer) -> FlowField:
    """Backward flow on the (t+1) frame from shared face identity.

    Every face carries one representative position per frame (the rounded
    centroid of its pixels); all pixels of a face at t+1 receive the same
    displacement of that representative between the two frames, which makes
    the flow of two identical buffers exactly zero. Faces not visible at t
    get an invalid zero vector.
    """
    if buf_t.face_id.shape != buf_t1.face_id.shape:
        raise ValueError("face buffers differ in resolution")
    rep0, seen0 = _representative_positions(buf_t)
    rep1, seen1 = _representative_positions(buf_t1)

    h, w = buf_t1.face_id.shape
    vectors = np.zeros((h, w, 2), dtype=np.float32)
    valid = np.zeros((h, w), dtype=np.uint8)

    fg = buf_t1.face_id != NONE_ID
    ids = buf_t1.face_id[fg]
    known = ids < len(seen0)
    ok = np.zeros(len(ids), dtype=bool)
    ok[known] = seen0[ids[known]]

    ys, xs = np.nonzero(fg)
    ys, xs, ids = ys[ok], xs[ok], ids[ok]
    disp = rep1[ids] - rep0[ids]
    vectors[ys, xs, 0] = disp[:, 0]
    vectors[ys, xs, 1] = disp[:, 1]
    valid[ys, xs] = 1
    return FlowField(vectors, valid)


def warp(image: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward bilinear warp: output(p) = image(p - flow(p)) on valid pixels.

    Invalid pixels and samples falling outside the image produce 0. Returns
    float64 regardless of input dtype; callers quantize as needed.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != flow.valid.shape:
        raise ValueError("image and flow differ in resolution")
    h, w = flow.valid.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx = xs - flow.vectors[:, :, 0].astype(np.float64)
    sy = ys - flow.vectors[:, :, 1].astype(np.float64)
    ok = (flow.valid != 0) & (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)

    out = np.zeros_like(image)
    if not ok.any():
        return out
    sxo, syo = sx[ok], sy[ok]
    x0 = np.floor(sxo).astype(np.int64)
    y0 = np.floor(syo).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (sxo - x0)
    ay = (syo - y0)
    if image.ndim == 3:
        ax = ax[:, None]
        ay = ay[:, None]
    sample = (
        image[y0, x0] * (1 - ax) * (1 - ay)
        + image[y0, x1] * ax * (1 - ay)
        + image[y1, x0] * (1 - ax) * ay
        + image[y1, x1] * ax * ay
    )
    out[ok] = sample
    return out


def temporal_compose(initial_fg: np.ndarray, prev_fg: np.ndarray, flow: FlowField,
                     zeta: float) -> np.ndarray:
    """Residual temporal synthesis: initial + zeta * warp(previous, flow).

    The sum is clamped to [0, 255]; with zeta = 0 this is the identity on
    the initial frame. Frame 1 of a sequence bypasses this operator.
    """
    initial = np.asarray(initial_fg, dtype=np.float64)
    out = initial + zeta * warp(prev_fg, flow)
    return np.clip(out, 0.0, 255.0)


def composite(fg: np.ndarray, bg: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Foreground/background blend with a binary mask: exact per-pixel select."""
    fg = np.asarray(fg)
    bg = np.asarray(bg)
    mask = np.asarray(mask)
    if fg.shape != bg.shape:
        raise ValueError(f"foreground {fg.shape} and background {bg.shape} differ")
    if mask.shape != fg.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {fg.shape[:2]}")
    m = mask.astype(bool)
    if fg.ndim == 3:
        m = m[:, :, None]
    return np.where(m, fg, bg)


def flow_to_rgb(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """HSV-coded flow visualization: hue = direction, value = magnitude."""
    dx = flow.vectors[:, :, 0].astype(np.float64)
    dy = flow.vectors[:, :, 1].astype(np.float64)
    mag = np.hypot(dx, dy)
    if max_magnitude is None:
        max_magnitude = float(mag.max()) or 1.0
    hue = (np.arctan2(dy, dx) + np.pi) / (2 * np.pi)  # [0, 1)
    val = np.clip(mag / max_magnitude, 0.0, 1.0)
    sat = np.ones_like(val)

    i = np.floor(hue * 6.0).astype(np.int64) % 6
    f = hue * 6.0 - np.floor(hue * 6.0)
    p = val * (1.0 - sat)
    q = val * (1.0 - sat * f)
    t = val * (1.0 - sat * (1.0 - f))
    r = np.choose(i, [val, q, p, p, t, val])
    g = np.choose(i, [t, val, val, q, p, p])
    b = np.choose(i, [p, p, t, val, val, q])
    rgb = np.stack([r, g, b], axis=-1)
    rgb[flow.valid == 0] = 0.0
    return np.rint(rgb * 255.0).astype(np.uint8)
