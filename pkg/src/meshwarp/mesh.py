"""Triangle-mesh data model: geometry, per-face body-part labels, symmetric parts.

The mesh topology (faces + labels) is fixed for a whole sequence; only vertex
positions change over time. Face identity is therefore the temporal and
cross-view correspondence used everywhere else in this package.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MSEQ_MAGIC = b"MSEQ1"


@dataclass(frozen=True)
class BodyMesh:
    """Triangle mesh with a total per-face body-part labeling.

    Parameters
    ----------
    vertices : (V, 3) float array
        Vertex positions in meters.
    faces : (F, 3) int array
        Vertex-index triples. The face list is the identity map for the
        whole pipeline: face ``i`` means the same surface element in every
        pose and every view.
    face_labels : (F,) int array
        Body-part id per face, ids >= 1 (0 is reserved for background).
    label_names : dict
        Optional part id -> readable name.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_labels: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int32)
        labels = np.asarray(self.face_labels, dtype=np.int32)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "face_labels", labels)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            bad = int(np.flatnonzero((faces < 0).any(1) | (faces >= len(vertices)).any(1))[0])
            raise ValueError(f"face {bad} references an out-of-range vertex index")
        if labels.shape != (len(faces),):
            raise ValueError(
                f"label count mismatch: {labels.shape[0]} labels for {len(faces)} faces"
            )
        if labels.size and labels.min() < 1:
            raise ValueError("face labels must be >= 1 (0 is the background label)")

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def face_to_label(self, face_id: int) -> int:
        """Label of one face; raises on out-of-range ids."""
        if not 0 <= face_id < self.n_faces:
            raise ValueError(f"face id {face_id} out of range [0, {self.n_faces})")
        return int(self.face_labels[face_id])

    def face_centroids(self, vertices: np.ndarray | None = None) -> np.ndarray:
        """(F, 3) centroids, optionally for a posed vertex array."""
        v = self.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        return v[self.faces].mean(axis=1)

    def face_areas(self, vertices: np.ndarray | None = None) -> np.ndarray:
        v = self.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def part_ids(self) -> np.ndarray:
        return np.unique(self.face_labels)


@dataclass(frozen=True)
class SymmetricPartMap:
    """Involution over body-part ids (left <-> right, midline parts self-paired)."""

    pairs: dict[int, int]

    def __post_init__(self):
        for a, b in self.pairs.items():
            if self.pairs.get(b) != a:
                raise ValueError(f"symmetric pairs are not an involution: {a} -> {b} -> {self.pairs.get(b)}")

    def mirror(self, label: int) -> int:
        try:
            return self.pairs[label]
        except KeyError:
            raise ValueError(f"unknown part label {label} in symmetric-part map") from None

    def covers(self, labels) -> bool:
        return all(int(l) in self.pairs for l in np.unique(labels))


def mirror_label(sym: SymmetricPartMap, label: int) -> int:
    """Mirrored body-part id; ``mirror(mirror(l)) == l`` by construction."""
    return sym.mirror(label)


@dataclass(frozen=True)
class MeshSequence:
    """Per-frame vertex arrays sharing one topology.

    ``frames`` is (T, V, 3); the faces/labels live on the template
    :class:`BodyMesh`. Vertex identity over time is the temporal
    correspondence, so no per-frame topology is stored.
    """

    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValueError(f"frames must be (T, V, 3), got {frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# OBJ / CSV ingestion
# ---------------------------------------------------------------------------

def load_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a Wavefront OBJ with triangular faces.

    Only ``v`` and ``f`` records are consumed; face entries may carry
    texture/normal slots (``a/b/c``), of which only the vertex index is used.
    Faces must be triangles (quads are rejected, pre-triangulate upstream)
    and indices are 1-based.
    """
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex record needs 3 coordinates")
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "f":
                idx = parts[1:]
                if len(idx) != 3:
                    raise ValueError(
                        f"{path}:{lineno}: non-triangle face with {len(idx)} vertices "
                        "(triangulate before loading)"
                    )
                tri = []
                for token in idx:
                    v = int(token.split("/")[0])
                    if v < 1:
                        raise ValueError(f"{path}:{lineno}: vertex index {v} out of range (1-based)")
                    tri.append(v - 1)
                faces.append(tuple(tri))
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    if tris.size and tris.max() >= len(verts):
        raise ValueError(f"{path}: face references vertex {tris.max() + 1} but only {len(verts)} vertices present")
    return verts, tris


def save_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in np.asarray(faces, dtype=np.int64):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _read_csv_rows(path, n_cols: int) -> list[list[str]]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            rows.append(row[:n_cols])
    # tolerate a header row of column names
    if rows and not rows[0][0].lstrip("-").isdigit():
        rows = rows[1:]
    return rows


def load_face_labels(path, n_faces: int) -> np.ndarray:
    """Load a ``face_index,label_id`` CSV covering every face exactly once."""
    rows = _read_csv_rows(path, 2)
    if len(rows) != n_faces:
        raise ValueError(f"label count mismatch: {len(rows)} labels for {n_faces} faces")
    labels = np.zeros(n_faces, dtype=np.int32)
    seen = np.zeros(n_faces, dtype=bool)
    for row in rows:
        fi, lab = int(row[0]), int(row[1])
        if not 0 <= fi < n_faces:
            raise ValueError(f"label file references face {fi}, mesh has {n_faces} faces")
        if seen[fi]:
            raise ValueError(f"face {fi} labeled twice")
        seen[fi] = True
        labels[fi] = lab
    return labels


def save_face_labels(path, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face_index", "label_id"])
        for i, lab in enumerate(np.asarray(labels)):
            w.writerow([i, int(lab)])


def load_sym_pairs(path) -> SymmetricPartMap:
    """Load a ``label_a,label_b`` CSV; unlisted directions are mirrored automatically."""
    pairs: dict[int, int] = {}
    for row in _read_csv_rows(path, 2):
        a, b = int(row[0]), int(row[1])
        for x, y in ((a, b), (b, a)):
            if x in pairs and pairs[x] != y:
                raise ValueError(f"conflicting symmetric pair for label {x}")
            pairs[x] = y
    return SymmetricPartMap(pairs)


def save_sym_pairs(path, sym: SymmetricPartMap) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label_a", "label_b"])
        done = set()
        for a in sorted(sym.pairs):
            b = sym.pairs[a]
            if (b, a) not in done:
                w.writerow([a, b])
                done.add((a, b))


def load_label_names(path) -> dict[int, str]:
    return {int(r[0]): r[1] for r in _read_csv_rows(path, 2)}


def load_mesh(obj_path, labels_path=None, names_path=None) -> BodyMesh:
    """Load a template mesh plus its face labeling.

    Without ``labels_path`` every face gets label 1 ("body"), which is enough
    for label-free work such as building a neighbor table. The template is
    rejected if it contains a zero-area face; posed frames are allowed to
    degenerate (they simply rasterize to nothing) but the template must not.
    """
    vertices, faces = load_obj(obj_path)
    if labels_path is None:
        labels = np.ones(len(faces), dtype=np.int32)
        names = {1: "body"}
    else:
        labels = load_face_labels(labels_path, len(faces))
        names = load_label_names(names_path) if names_path else {}
    mesh = BodyMesh(vertices, faces, labels, names)
    areas = mesh.face_areas()
    if areas.size and areas.min() <= 0.0:
        bad = int(np.argmin(areas))
        raise ValueError(f"template mesh has degenerate (zero-area) face {bad}")
    return mesh


# ---------------------------------------------------------------------------
# Mesh sequences: MSEQ1 binary container or a directory of per-frame OBJs
# ---------------------------------------------------------------------------

def save_mesh_sequence(path, seq: MeshSequence) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, v, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(MSEQ_MAGIC)
        fh.write(struct.pack("<II", t, v))
        fh.write(frames.tobytes())


def load_mesh_sequence(path, faces: np.ndarray | None = None) -> MeshSequence:
    """Load an MSEQ1 container, or a directory of per-frame OBJs.

    For OBJ directories the per-frame face lists must be identical (topology
    is shared over time); when ``faces`` is given it is checked against the
    frames' topology too.
    """
    p = Path(path)
    if p.is_dir():
        obj_files = sorted(q for q in p.iterdir() if q.suffix.lower() == ".obj")
        if not obj_files:
            raise ValueError(f"no .obj frames found in {p}")
        frame_list = []
        ref_faces = None
        for q in obj_files:
            verts, f = load_obj(q)
            if ref_faces is None:
                ref_faces = f
            elif f.shape != ref_faces.shape or not np.array_equal(f, ref_faces):
                raise ValueError(f"{q}: frame topology differs from {obj_files[0]}")
            frame_list.append(verts)
        if faces is not None and not np.array_equal(ref_faces, np.asarray(faces, dtype=np.int32)):
            raise ValueError(f"{p}: sequence topology differs from the template mesh")
        frames = np.stack(frame_list)
        if frames.ndim != 3:
            raise ValueError(f"{p}: frames have differing vertex counts")
        return MeshSequence(frames)

    with open(p, "rb") as fh:
        magic = fh.read(len(MSEQ_MAGIC))
        if magic != MSEQ_MAGIC:
            raise ValueError(f"{p}: bad magic {magic!r}, expected {MSEQ_MAGIC!r}")
        t, v = struct.unpack("<II", fh.read(8))
        body = fh.read(t * v * 3 * 4)
        if len(body) != t * v * 3 * 4:
            raise ValueError(f"{p}: truncated mesh sequence")
        frames = np.frombuffer(body, dtype="<f4").reshape(t, v, 3).astype(np.float64)
    return MeshSequence(frames)
