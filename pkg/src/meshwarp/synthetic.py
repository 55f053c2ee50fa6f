"""Procedural two-view test scenes with exact ground truth.

The actor is a box-limb humanoid: every part is a welded, subdivided box,
and child parts are embedded a couple of centimeters into their parent so
short "bridge" triangles (hidden inside the parent volume) make the face
adjacency graph of the whole body connected. Faces carry part labels and a
per-face color chart, so ground-truth renders for any camera are exact and
mis-transferred colors are countable.

The standard scene places two cameras at +-45 degrees around the subject and
tucks the left arm into the input camera's shadow behind the torso, which
makes one body part fully occluded from the input view while remaining
(partly) visible from the target view. Optional extras: a free-standing
occluder plane in front of the input camera, and per-frame flicker noise on
the input frames.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .mesh import (BodyMesh, MeshSequence, SymmetricPartMap, save_face_labels,
                   save_mesh_sequence, save_obj, save_sym_pairs)
from .raster import Camera, mask_of, paint_faces, rasterize

PART_LABELS = {
    "torso": 1, "head": 2,
    "left_upper_arm": 3, "right_upper_arm": 4,
    "left_forearm": 5, "right_forearm": 6,
    "left_thigh": 7, "right_thigh": 8,
    "left_shin": 9, "right_shin": 10,
    "occluder": 11,
}

SYM_PAIRS = [(1, 1), (2, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 11)]

_BASE_COLORS = {
    1: (60, 90, 170), 2: (210, 170, 140),
    3: (190, 45, 45), 4: (190, 45, 45),
    5: (45, 160, 70), 6: (45, 160, 70),
    7: (160, 130, 45), 8: (160, 130, 45),
    9: (95, 60, 150), 10: (95, 60, 150),
    11: (120, 120, 120),
}

# name: center, size, subdivisions, parent, attachment point
_PART_SPECS = {
    "torso": ((0.0, 1.15, 0.0), (0.34, 0.52, 0.20), (4, 6, 3), None, None),
    "head": ((0.0, 1.52, 0.0), (0.20, 0.24, 0.20), (3, 3, 3), "torso", (0.0, 1.40, 0.0)),
    "left_upper_arm": ((-0.19, 1.20, 0.0), (0.10, 0.36, 0.10), (2, 5, 2), "torso", (-0.155, 1.38, 0.0)),
    "right_upper_arm": ((0.19, 1.20, 0.0), (0.10, 0.36, 0.10), (2, 5, 2), "torso", (0.155, 1.38, 0.0)),
    "left_forearm": ((-0.19, 0.86, 0.0), (0.08, 0.36, 0.08), (2, 5, 2), "left_upper_arm", (-0.19, 1.03, 0.0)),
    "right_forearm": ((0.19, 0.86, 0.0), (0.08, 0.36, 0.08), (2, 5, 2), "right_upper_arm", (0.19, 1.03, 0.0)),
    "left_thigh": ((-0.09, 0.72, 0.0), (0.12, 0.40, 0.12), (2, 5, 2), "torso", (-0.09, 0.91, 0.0)),
    "right_thigh": ((0.09, 0.72, 0.0), (0.12, 0.40, 0.12), (2, 5, 2), "torso", (0.09, 0.91, 0.0)),
    "left_shin": ((-0.09, 0.31, 0.0), (0.10, 0.44, 0.10), (2, 5, 2), "left_thigh", (-0.09, 0.525, 0.0)),
    "right_shin": ((0.09, 0.31, 0.0), (0.10, 0.44, 0.10), (2, 5, 2), "right_thigh", (0.09, 0.525, 0.0)),
}

_PIVOTS = {
    "left_shoulder": (-0.19, 1.38, 0.0), "right_shoulder": (0.19, 1.38, 0.0),
    "left_elbow": (-0.19, 1.03, 0.0), "right_elbow": (0.19, 1.03, 0.0),
    "left_hip": (-0.09, 0.91, 0.0), "right_hip": (0.09, 0.91, 0.0),
}

SUBJECT_CENTER = np.array([0.0, 1.05, 0.0])


@dataclass
class SceneSpec:
    """Knobs of the procedural scene; the defaults are the standard scene."""

    frames: int = 8
    width: int = 192
    height: int = 192
    input_angle_deg: float = -45.0
    target_angle_deg: float = 45.0
    cam_distance: float = 3.2
    cam_height: float = 1.1
    focal: float = 300.0
    hidden_arm: bool = True       # tuck the left arm behind the torso w.r.t. the input view
    occluder: bool = False        # free-standing plane in front of the input camera
    noise: int = 0                # flicker amplitude on input frames, uint8 levels
    texture: str = "chart"        # "chart" (per-face colors) or "pattern" (smooth gradient)
    motion: float = 1.0           # articulation amplitude scale, 0 = static
    seed: int = 0
    fps: float = 30.0


def _box(center, size, subdiv):
    """Closed axis-aligned box with subdivided, vertex-welded sides."""
    c = np.asarray(center, dtype=np.float64)
    s = np.asarray(size, dtype=np.float64) / 2.0
    n = tuple(int(v) for v in subdiv)
    axes = [np.linspace(c[i] - s[i], c[i] + s[i], n[i] + 1) for i in range(3)]

    vmap: dict[bytes, int] = {}
    verts: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []

    def vid(p):
        key = p.tobytes()
        if key not in vmap:
            vmap[key] = len(verts)
            verts.append(p)
        return vmap[key]

    def side(fixed_axis, fixed_val, ua, va):
        us, vs = axes[ua], axes[va]
        for i in range(len(us) - 1):
            for j in range(len(vs) - 1):
                quad = []
                for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = np.empty(3)
                    p[fixed_axis] = fixed_val
                    p[ua] = us[i + du]
                    p[va] = vs[j + dv]
                    quad.append(vid(p))
                a, b, cc, d = quad
                faces.append((a, b, cc))
                faces.append((a, cc, d))

    for axis in range(3):
        ua, va = [i for i in range(3) if i != axis]
        side(axis, axes[axis][0], ua, va)
        side(axis, axes[axis][-1], ua, va)
    return np.array(verts), np.array(faces, dtype=np.int32)


def _plane(center, normal, size, subdiv):
    """Single-sided subdivided quad facing ``normal``."""
    c = np.asarray(center, dtype=np.float64)
    nrm = np.asarray(normal, dtype=np.float64)
    nrm = nrm / np.linalg.norm(nrm)
    helper = np.array([0.0, 1.0, 0.0])
    if abs(nrm @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    u = np.cross(helper, nrm)
    u /= np.linalg.norm(u)
    v = np.cross(nrm, u)
    nu = nv = int(subdiv)
    verts = []
    for j in range(nv + 1):
        for i in range(nu + 1):
            a = (i / nu - 0.5) * size
            b = (j / nv - 0.5) * size
            verts.append(c + a * u + b * v)
    faces = []
    for j in range(nv):
        for i in range(nu):
            a = j * (nu + 1) + i
            b = a + 1
            d = a + nu + 1
            e = d + 1
            faces.append((a, b, e))
            faces.append((a, e, d))
    return np.array(verts), np.array(faces, dtype=np.int32)


def _part_edges(faces):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def _pick_edge(verts, faces, attach, inside=None):
    edges = _part_edges(faces)
    if inside is not None:
        keep = inside(verts[edges[:, 0]]) & inside(verts[edges[:, 1]])
        edges = edges[keep]
        if not len(edges):
            raise RuntimeError("no candidate edge lies inside the parent volume")
    mid = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    d = np.linalg.norm(mid - np.asarray(attach), axis=1)
    return edges[int(np.argmin(d))]


def _box_interior(center, size, margin=1e-6):
    c = np.asarray(center)
    half = np.asarray(size) / 2.0 - margin
    return lambda p: (np.abs(np.atleast_2d(p) - c) < half).all(axis=1)


@dataclass
class Humanoid:
    """Template humanoid plus the bookkeeping needed to pose it."""

    mesh: BodyMesh
    sym: SymmetricPartMap
    vertex_ranges: dict[str, tuple[int, int]]
    pivots: dict[str, np.ndarray] = field(default_factory=dict)


def build_humanoid(with_occluder: bool = False,
                   input_view_dir: np.ndarray | None = None) -> Humanoid:
    """Assemble the canonical-pose template (arms at the sides).

    Bridge triangles between embedded part ends make the face graph
    connected; they are labeled as the parent part and are invisible from
    outside (both their child-side endpoints lie strictly inside the parent
    box). The optional occluder plane is a disconnected extra part facing
    ``input_view_dir``.
    """
    all_verts: list[np.ndarray] = []
    all_faces: list[np.ndarray] = []
    all_labels: list[np.ndarray] = []
    vertex_ranges: dict[str, tuple[int, int]] = {}
    face_lists: dict[str, np.ndarray] = {}
    offset = 0

    for name, (center, size, subdiv, _, _) in _PART_SPECS.items():
        v, f = _box(center, size, subdiv)
        vertex_ranges[name] = (offset, offset + len(v))
        face_lists[name] = f + offset
        all_verts.append(v)
        all_faces.append(f + offset)
        all_labels.append(np.full(len(f), PART_LABELS[name], dtype=np.int32))
        offset += len(v)

    verts = np.concatenate(all_verts)
    for name, (center, size, subdiv, parent, attach) in _PART_SPECS.items():
        if parent is None:
            continue
        p_center, p_size = _PART_SPECS[parent][0], _PART_SPECS[parent][1]
        c0, c1 = _pick_edge(verts, face_lists[name], attach,
                            inside=_box_interior(p_center, p_size))
        p0, p1 = _pick_edge(verts, face_lists[parent], attach)
        bridge = np.array([(c0, c1, p0), (c1, p1, p0)], dtype=np.int32)
        all_faces.append(bridge)
        all_labels.append(np.full(2, PART_LABELS[parent], dtype=np.int32))

    if with_occluder:
        if input_view_dir is None:
            input_view_dir = np.array([0.0, 0.0, 1.0])
        eye_dir = -np.asarray(input_view_dir, dtype=np.float64)
        center = SUBJECT_CENTER + 1.7 * eye_dir + np.array([0.0, -0.1, 0.0])
        v, f = _plane(center, input_view_dir, 0.9, 3)
        vertex_ranges["occluder"] = (offset, offset + len(v))
        verts = np.concatenate([verts, v])
        all_faces.append(f + offset)
        all_labels.append(np.full(len(f), PART_LABELS["occluder"], dtype=np.int32))

    faces = np.concatenate(all_faces)
    labels = np.concatenate(all_labels)
    names = {v: k for k, v in PART_LABELS.items()}
    mesh = BodyMesh(verts, faces, labels, names)
    if mesh.face_areas().min() <= 0:
        raise RuntimeError("humanoid construction produced a degenerate face")
    sym = SymmetricPartMap({a: b for a, b in SYM_PAIRS} | {b: a for a, b in SYM_PAIRS})
    return Humanoid(mesh, sym, vertex_ranges,
                    {k: np.asarray(v) for k, v in _PIVOTS.items()})


def face_color_chart(mesh: BodyMesh) -> np.ndarray:
    """Per-face uint8 colors: part base color, two-shade checker by parity."""
    base = np.array([_BASE_COLORS.get(int(l), (128, 128, 128)) for l in mesh.face_labels],
                    dtype=np.int32)
    parity = (np.arange(mesh.n_faces) % 2) * 2 - 1
    return np.clip(base + parity[:, None] * 12, 0, 255).astype(np.uint8)


def _rotate(verts_slice, pivot, axis, deg):
    th = np.deg2rad(deg)
    c, s = np.cos(th), np.sin(th)
    if axis == "x":
        rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    elif axis == "y":
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    else:
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    return (verts_slice - pivot) @ rot.T + pivot


def _view_direction(angle_deg: float) -> np.ndarray:
    th = np.deg2rad(angle_deg)
    eye_dir = np.array([np.sin(th), 0.0, np.cos(th)])
    return -eye_dir  # from camera toward subject


def pose_sequence(body: Humanoid, spec: SceneSpec) -> MeshSequence:
    """Scripted motion: swinging right arm and legs, optional hidden left arm.

    The hidden-arm placement folds the left forearm against the upper arm
    and moves the assembly into the input camera's shadow straight behind
    the torso; it stays there for the whole sequence while the rest of the
    body articulates.
    """
    t_frames = spec.frames
    frames = np.repeat(body.mesh.vertices[None], t_frames, axis=0)

    def ids(*names):
        sel = []
        for nm in names:
            a, b = body.vertex_ranges[nm]
            sel.append(np.arange(a, b))
        return np.concatenate(sel)

    r_forearm = ids("right_forearm")
    r_arm = ids("right_upper_arm", "right_forearm")
    l_forearm = ids("left_forearm")
    l_arm = ids("left_upper_arm", "left_forearm")
    l_leg = ids("left_thigh", "left_shin")
    r_leg = ids("right_thigh", "right_shin")
    body_ids = ids(*(n for n in _PART_SPECS if n in body.vertex_ranges))

    hide_delta = None
    if spec.hidden_arm:
        behind = _view_direction(spec.input_angle_deg)  # past the subject, away from the camera
        rest_center = np.array(_PART_SPECS["left_upper_arm"][0])
        target_xz = SUBJECT_CENTER + 0.24 * behind
        hide_delta = np.array([target_xz[0] - rest_center[0], 0.03,
                               target_xz[2] - rest_center[2]])

    amp = spec.motion
    for t in range(t_frames):
        ph = 2.0 * np.pi * t / max(t_frames, 1)
        v = frames[t]
        v[r_forearm] = _rotate(v[r_forearm], body.pivots["right_elbow"], "x",
                               amp * 28.0 * np.sin(ph + 0.7))
        v[r_arm] = _rotate(v[r_arm], body.pivots["right_shoulder"], "x",
                           amp * 32.0 * np.sin(ph))
        if spec.hidden_arm:
            v[l_forearm] = _rotate(v[l_forearm], body.pivots["left_elbow"], "x", 165.0)
            v[l_arm] = v[l_arm] + hide_delta
        else:
            v[l_forearm] = _rotate(v[l_forearm], body.pivots["left_elbow"], "x",
                                   amp * 28.0 * np.sin(ph + np.pi + 0.7))
            v[l_arm] = _rotate(v[l_arm], body.pivots["left_shoulder"], "x",
                               amp * 32.0 * np.sin(ph + np.pi))
        v[l_leg] = _rotate(v[l_leg], body.pivots["left_hip"], "x",
                           amp * 12.0 * np.sin(ph + np.pi))
        v[r_leg] = _rotate(v[r_leg], body.pivots["right_hip"], "x",
                           amp * 12.0 * np.sin(ph))
        v[body_ids, 0] += amp * 0.05 * np.sin(ph)

    return MeshSequence(frames, fps=spec.fps)


def scene_cameras(spec: SceneSpec) -> tuple[Camera, Camera]:
    def cam(angle_deg):
        th = np.deg2rad(angle_deg)
        eye = SUBJECT_CENTER + spec.cam_distance * np.array([np.sin(th), 0.0, np.cos(th)])
        eye[1] = spec.cam_height
        return Camera.look_at(eye, SUBJECT_CENTER, fx=spec.focal,
                              width=spec.width, height=spec.height)
    return cam(spec.input_angle_deg), cam(spec.target_angle_deg)


def smooth_pattern(width: int, height: int) -> np.ndarray:
    """Gently varying full-frame RGB pattern (about 1.5 levels/pixel slope)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    r = 128 + 45 * np.sin(2 * np.pi * (xs + ys) / (width + height))
    g = 128 + 45 * np.sin(2 * np.pi * xs / width + 1.0)
    b = 128 + 45 * np.cos(2 * np.pi * ys / height + 2.0)
    return np.rint(np.stack([r, g, b], axis=-1)).astype(np.uint8)


def make_synthetic(spec: SceneSpec, out_dir) -> dict:
    """Write the scene to disk; deterministic for a fixed spec.

    Produces the template + labels + symmetric pairs, the posed vertex
    sequence, both camera files, noisy input-view frames and clean
    target-view ground truth, the face color chart, and a ready-to-fill
    pipeline config. Returns a manifest dict (also saved as scene.json)
    with diagnostics such as per-frame visibility of the hidden arm.
    """
    out = Path(out_dir)
    (out / "cameras").mkdir(parents=True, exist_ok=True)
    (out / "frames" / "input").mkdir(parents=True, exist_ok=True)
    (out / "frames" / "target_gt").mkdir(parents=True, exist_ok=True)

    body = build_humanoid(with_occluder=spec.occluder,
                          input_view_dir=_view_direction(spec.input_angle_deg))
    mesh = body.mesh
    seq = pose_sequence(body, spec)
    cam_in, cam_tg = scene_cameras(spec)
    chart = face_color_chart(mesh)
    rng = np.random.default_rng(spec.seed)
    pattern = smooth_pattern(spec.width, spec.height) if spec.texture == "pattern" else None

    save_obj(out / "template.obj", mesh.vertices, mesh.faces)
    save_face_labels(out / "labels.csv", mesh.face_labels)
    save_sym_pairs(out / "sym_pairs.csv", body.sym)
    with open(out / "part_names.csv", "w", encoding="utf-8") as fh:
        fh.write("label_id,name\n")
        for lab in sorted(mesh.label_names):
            fh.write(f"{lab},{mesh.label_names[lab]}\n")
    save_mesh_sequence(out / "sequence.mseq", seq)
    cam_in.save(out / "cameras" / "input.json")
    cam_tg.save(out / "cameras" / "target.json")
    np.savetxt(out / "face_chart.csv", np.c_[np.arange(mesh.n_faces), chart],
               fmt="%d", delimiter=",", header="face_index,r,g,b", comments="")

    hidden_labels = {PART_LABELS["left_upper_arm"], PART_LABELS["left_forearm"]}
    hidden_arm_seen = []
    for t in range(spec.frames):
        buf_in = rasterize(seq.frames[t], mesh.faces, cam_in)
        buf_tg = rasterize(seq.frames[t], mesh.faces, cam_tg)
        if pattern is not None:
            frame_in = pattern * mask_of(buf_in)[:, :, None]
            frame_tg = pattern * mask_of(buf_tg)[:, :, None]
        else:
            frame_in = paint_faces(buf_in, chart)
            frame_tg = paint_faces(buf_tg, chart)
        if spec.noise > 0:
            flicker = rng.integers(-spec.noise, spec.noise + 1,
                                   size=frame_in.shape, dtype=np.int16)
            frame_in = np.clip(frame_in.astype(np.int16) + flicker, 0, 255).astype(np.uint8)
        imgio.save_png(out / "frames" / "input" / f"{t:06d}.png", frame_in)
        imgio.save_png(out / "frames" / "target_gt" / f"{t:06d}.png", frame_tg)

        seen = np.unique(mesh.face_labels[buf_in.face_id[buf_in.face_id >= 0]])
        hidden_arm_seen.append(bool(hidden_labels & set(int(s) for s in seen)))

    config = {
        "input": {"frames_dir": "frames/input", "camera": "cameras/input.json"},
        "target": {"camera": "cameras/target.json", "gt_frames_dir": "frames/target_gt"},
        "mesh_sequence": "sequence.mseq",
        "template_mesh": "template.obj",
        "face_labels": "labels.csv",
        "sym_pairs": "sym_pairs.csv",
        "neighbor_table": "table.fnt",
        "mode": "I+II+III",
        "n": 50,
        "zeta": 0.1,
        "background": None,
        "output_dir": "out",
    }
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest = {
        "spec": asdict(spec),
        "n_faces": mesh.n_faces,
        "n_vertices": mesh.n_vertices,
        "hidden_arm_visible_in_input": hidden_arm_seen,
    }
    with open(out / "scene.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
