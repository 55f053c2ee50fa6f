"""Software rasterization of posed meshes into per-pixel face-index buffers.

A :class:`FaceBuffer` records, for every pixel, which face is visible and at
what camera-space depth. Everything downstream (masks, segmentation, depth
maps, texture transfer, motion flow) derives from it, so the rasterizer is a
plain z-buffer scan converter: pixel-center coverage with a deterministic
boundary ownership rule, perspective-correct depth, no anti-aliasing, no
back-face culling (bodies legitimately show back faces at grazing angles).
Exact depth ties break toward the lower face id.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .mesh import BodyMesh

FB_MAGIC = b"FB1"
NONE_ID = -1          # in-memory "no face" marker (0xFFFFFFFF on disk)
_Z_EPS = 1e-9         # triangles with any vertex at z <= eps are skipped, no near-plane clipping


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels, world-to-camera extrinsics.

    Image coordinates: x right, y down, origin at the top-left corner; the
    center of pixel (ix, iy) is at (ix + 0.5, iy + 0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray       # (3, 3) world -> camera rotation
    t: np.ndarray       # (3,) translation, p_cam = R @ p_world + t
    width: int
    height: int

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal within 1e-6")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Continuous image coordinates (N, 2) and camera-space depths (N,)."""
        p = self.to_camera(points)
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * p[:, 0] / z + self.cx
            v = self.fy * p[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "R": [float(x) for x in self.R.reshape(-1)],
            "t": [float(x) for x in self.t],
            "w": self.width, "h": self.height,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
                   R=np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
                   t=np.asarray(d["t"], dtype=np.float64),
                   width=int(d["w"]), height=int(d["h"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Camera":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def look_at(cls, eye, target, *, fx: float, fy: float | None = None,
                width: int, height: int, up=(0.0, 1.0, 0.0),
                cx: float | None = None, cy: float | None = None) -> "Camera":
        """Camera at ``eye`` looking toward ``target`` with the given world up."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        nz = np.linalg.norm(z)
        if nz == 0:
            raise ValueError("eye and target coincide")
        z = z / nz
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            raise ValueError("view direction is parallel to the up vector")
        x = x / nx
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls(fx=fx, fy=fy if fy is not None else fx,
                   cx=width / 2.0 if cx is None else cx,
                   cy=height / 2.0 if cy is None else cy,
                   R=R, t=-R @ eye, width=width, height=height)

    def rolled(self, angle_rad: float) -> "Camera":
        """Camera rotated about its own optical axis."""
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        roll = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return replace(self, R=roll @ self.R, t=roll @ self.t)


def from_weak_perspective(s: float, tx: float, ty: float, width: int, height: int,
                          focal: float = 5000.0) -> Camera:
    """Pinhole equivalent of weak-perspective (s, tx, ty) mesh-estimate cameras.

    The common upstream convention predicts a scale and an in-plane offset in
    the mesh's own units; pushing the mesh far along the optical axis of a
    long-focal pinhole reproduces that projection up to terms in the depth
    extent over distance.
    """
    if s <= 0:
        raise ValueError("weak-perspective scale must be positive")
    tz = 2.0 * focal / (s * width)
    return Camera(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                  R=np.eye(3), t=np.array([tx, ty, tz]), width=width, height=height)


@dataclass
class FaceBuffer:
    """Per-pixel face index + camera-space depth for one view and timestep."""

    face_id: np.ndarray   # (h, w) int32, NONE_ID where no face
    depth: np.ndarray     # (h, w) float32, +inf where no face

    def __post_init__(self):
        if self.face_id.shape != self.depth.shape:
            raise ValueError("face_id/depth shape mismatch")

    @property
    def height(self) -> int:
        return self.face_id.shape[0]

    @property
    def width(self) -> int:
        return self.face_id.shape[1]

    def save(self, path) -> None:
        h, w = self.face_id.shape
        with open(path, "wb") as fh:
            fh.write(FB_MAGIC)
            fh.write(struct.pack("<II", w, h))
            fh.write(np.ascontiguousarray(self.face_id, dtype=np.int32).view(np.uint32)
                     .astype("<u4").tobytes())
            fh.write(np.ascontiguousarray(self.depth, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "FaceBuffer":
        with open(path, "rb") as fh:
            magic = fh.read(len(FB_MAGIC))
            if magic != FB_MAGIC:
                raise ValueError(f"{path}: bad magic {magic!r}, expected {FB_MAGIC!r}")
            w, h = struct.unpack("<II", fh.read(8))
            n = w * h
            ids_raw = fh.read(4 * n)
            depth_raw = fh.read(4 * n)
            if len(ids_raw) != 4 * n or len(depth_raw) != 4 * n:
                raise ValueError(f"{path}: truncated face buffer")
        ids = np.frombuffer(ids_raw, dtype="<u4").reshape(h, w).astype(np.uint32).view(np.int32)
        depth = np.frombuffer(depth_raw, dtype="<f4").reshape(h, w).copy()
        return cls(ids.copy(), depth)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _boundary_owned(ex: float, ey: float) -> bool:
    # shared-edge pixels belong to exactly one of the two owning triangles:
    # with y growing downward this keeps edges whose interior lies to the
    # +x / -y side (the scanline analogue of the classic top-left rule)
    return ey < 0 or (ey == 0 and ex > 0)


def rasterize(vertices: np.ndarray, faces: np.ndarray, cam: Camera) -> FaceBuffer:
    """Z-buffered face-index rasterization of one posed mesh frame.

    Every pixel whose center is covered by at least one projected triangle
    gets the face with minimum perspective-correct depth; other pixels stay
    NONE. Triangles with a vertex behind the camera and triangles that
    project to zero area are skipped.
    """
    faces = np.asarray(faces, dtype=np.int32)
    h, w = cam.height, cam.width
    face_buf = np.full((h, w), NONE_ID, dtype=np.int32)
    depth_buf = np.full((h, w), np.inf, dtype=np.float64)

    uv, z = cam.project(vertices)
    tri_z = z[faces]
    candidates = np.flatnonzero((tri_z > _Z_EPS).all(axis=1))

    u, v = uv[:, 0], uv[:, 1]
    for fi in candidates:
        i0, i1, i2 = faces[fi]
        x0, y0, z0 = u[i0], v[i0], z[i0]
        x1, y1, z1 = u[i1], v[i1], z[i1]
        x2, y2, z2 = u[i2], v[i2], z[i2]

        area2 = _edge(x0, y0, x1, y1, x2, y2)
        if area2 == 0.0:
            continue
        if area2 < 0.0:
            x1, y1, z1, x2, y2, z2 = x2, y2, z2, x1, y1, z1
            area2 = -area2

        lo_x = max(0, int(np.ceil(min(x0, x1, x2) - 0.5)))
        hi_x = min(w - 1, int(np.floor(max(x0, x1, x2) - 0.5)))
        lo_y = max(0, int(np.ceil(min(y0, y1, y2) - 0.5)))
        hi_y = min(h - 1, int(np.floor(max(y0, y1, y2) - 0.5)))
        if lo_x > hi_x or lo_y > hi_y:
            continue

        px = np.arange(lo_x, hi_x + 1, dtype=np.float64) + 0.5
        py = (np.arange(lo_y, hi_y + 1, dtype=np.float64) + 0.5)[:, None]
        w0 = _edge(x1, y1, x2, y2, px, py)
        w1 = _edge(x2, y2, x0, y0, px, py)
        w2 = _edge(x0, y0, x1, y1, px, py)

        inside = (
            ((w0 > 0) | ((w0 == 0) & _boundary_owned(x2 - x1, y2 - y1)))
            & ((w1 > 0) | ((w1 == 0) & _boundary_owned(x0 - x2, y0 - y2)))
            & ((w2 > 0) | ((w2 == 0) & _boundary_owned(x1 - x0, y1 - y0)))
        )
        if not inside.any():
            continue

        inv_z = (w0 / area2) / z0 + (w1 / area2) / z1 + (w2 / area2) / z2
        with np.errstate(divide="ignore"):
            pix_z = 1.0 / inv_z

        tile_d = depth_buf[lo_y:hi_y + 1, lo_x:hi_x + 1]
        tile_f = face_buf[lo_y:hi_y + 1, lo_x:hi_x + 1]
        upd = inside & (pix_z < tile_d)
        tile_d[upd] = pix_z[upd]
        tile_f[upd] = fi

    return FaceBuffer(face_buf, depth_buf.astype(np.float32))


def mask_of(buf: FaceBuffer) -> np.ndarray:
    """Binary foreground mask: 1 wherever a face is visible."""
    return (buf.face_id != NONE_ID).astype(np.uint8)


def segmentation_of(buf: FaceBuffer, mesh: BodyMesh) -> np.ndarray:
    """Per-pixel body-part label map, 0 for background."""
    fg = buf.face_id != NONE_ID
    seg = np.zeros(buf.face_id.shape, dtype=np.int32)
    seg[fg] = mesh.face_labels[buf.face_id[fg]]
    return seg


def depth_of(buf: FaceBuffer) -> np.ndarray:
    """Depth channel in meters, +inf at background pixels."""
    return buf.depth.copy()


def shade(buf: FaceBuffer, vertices: np.ndarray, faces: np.ndarray, cam: Camera) -> np.ndarray:
    """Flat gray Lambertian render lit by a headlight at the camera origin."""
    faces = np.asarray(faces, dtype=np.int32)
    p = cam.to_camera(vertices)
    a, b, c = p[faces[:, 0]], p[faces[:, 1]], p[faces[:, 2]]
    n = np.cross(b - a, c - a)
    n_len = np.linalg.norm(n, axis=1)
    n_len[n_len == 0] = 1.0
    cent = (a + b + c) / 3.0
    c_len = np.linalg.norm(cent, axis=1)
    c_len[c_len == 0] = 1.0
    intensity = np.abs(np.einsum("ij,ij->i", n / n_len[:, None], cent / c_len[:, None]))
    gray = np.rint(255.0 * intensity).astype(np.uint8)

    img = np.zeros((buf.height, buf.width, 3), dtype=np.uint8)
    fg = buf.face_id != NONE_ID
    img[fg] = gray[buf.face_id[fg], None]
    return img


def paint_faces(buf: FaceBuffer, face_colors: np.ndarray,
                background=(0, 0, 0)) -> np.ndarray:
    """Render a per-face color chart through a face buffer."""
    face_colors = np.asarray(face_colors, dtype=np.uint8)
    img = np.empty((buf.height, buf.width, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    fg = buf.face_id != NONE_ID
    img[fg] = face_colors[buf.face_id[fg]]
    return img
