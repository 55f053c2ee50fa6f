"""Pairwise face-distance structure used to rank donor faces for occlusion fill.

Distances are computed once on the canonical-pose template (never on posed
frames) over the face-adjacency graph: nodes are faces, edges connect faces
sharing a mesh edge, edge weight is the centroid-to-centroid Euclidean
length. This is a ranking-faithful stand-in for exact surface geodesics at
body-mesh resolution. A truncated table (k nearest per face) is kept instead
of the full F x F matrix; no consumer looks past a few hundred neighbors.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial.distance import cdist

from .mesh import BodyMesh

logger = logging.getLogger(__name__)

GEODESIC = "geodesic"
EUCLIDEAN = "euclidean"

FNT_MAGIC = b"FNT1"
_METRIC_BYTES = {GEODESIC: b"G", EUCLIDEAN: b"E"}
_BYTE_METRICS = {v: k for k, v in _METRIC_BYTES.items()}

# padding for rows whose mesh component has fewer than k reachable faces
PAD_ID = -1


@dataclass(frozen=True)
class NeighborTable:
    """Row-sorted truncation of the pairwise face-distance matrix.

    ``neighbor_ids[f]`` lists the k nearest faces to ``f`` (excluding ``f``
    itself) in non-decreasing distance order, ties broken by ascending face
    id. Unreachable slots (disconnected meshes) are padded with ``PAD_ID``
    and ``inf``.
    """

    metric_tag: str
    neighbor_ids: np.ndarray     # (F, k) int32
    neighbor_dists: np.ndarray   # (F, k) float32

    def __post_init__(self):
        if self.metric_tag not in (GEODESIC, EUCLIDEAN):
            raise ValueError(f"unknown metric tag {self.metric_tag!r}")
        if self.neighbor_ids.shape != self.neighbor_dists.shape:
            raise ValueError("neighbor id/dist shape mismatch")

    @property
    def n_faces(self) -> int:
        return self.neighbor_ids.shape[0]

    @property
    def k(self) -> int:
        return self.neighbor_ids.shape[1]


def face_adjacency_graph(mesh: BodyMesh) -> csr_matrix:
    """Sparse symmetric graph over faces; weight = centroid distance.

    Faces are adjacent when they share an (undirected) mesh edge. Non-manifold
    edges shared by more than two faces make all owners pairwise adjacent.
    """
    faces = mesh.faces
    n_f = mesh.n_faces
    cent = mesh.face_centroids()

    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    owner = np.tile(np.arange(n_f, dtype=np.int64), 3)
    key = edges[:, 0].astype(np.int64) * mesh.n_vertices + edges[:, 1]
    order = np.argsort(key, kind="stable")
    key_sorted = key[order]
    owner_sorted = owner[order]
    starts = np.flatnonzero(np.r_[True, key_sorted[1:] != key_sorted[:-1]])
    counts = np.diff(np.r_[starts, len(key_sorted)])

    rows_i: list[np.ndarray] = []
    rows_j: list[np.ndarray] = []
    # manifold case: exactly two owners per edge
    two = starts[counts == 2]
    if len(two):
        rows_i.append(owner_sorted[two])
        rows_j.append(owner_sorted[two + 1])
    for s, c in zip(starts[counts > 2], counts[counts > 2]):
        group = owner_sorted[s:s + c]
        ii, jj = np.triu_indices(c, k=1)
        rows_i.append(group[ii])
        rows_j.append(group[jj])

    if rows_i:
        i = np.concatenate(rows_i)
        j = np.concatenate(rows_j)
        w = np.linalg.norm(cent[i] - cent[j], axis=1)
        data = np.concatenate([w, w])
        ij = (np.concatenate([i, j]), np.concatenate([j, i]))
    else:
        data, ij = np.zeros(0), (np.zeros(0, np.int64), np.zeros(0, np.int64))
    return csr_matrix((data, ij), shape=(n_f, n_f))


def _truncate_row(dist_row: np.ndarray, source: int, k: int,
                  ids_out: np.ndarray, dists_out: np.ndarray) -> bool:
    """Fill one table row from a full distance row; returns reachability flag."""
    order = np.argsort(dist_row, kind="stable")  # stable: ties stay in ascending-id order
    order = order[order != source]
    sel = order[:k]
    d = dist_row[sel]
    finite = np.isfinite(d)
    m = int(finite.sum())
    ids_out[:m] = sel[:m]
    dists_out[:m] = d[:m]
    ids_out[m:] = PAD_ID
    dists_out[m:] = np.inf
    return m == k


def build_neighbor_table(mesh: BodyMesh, k: int, metric: str = GEODESIC,
                         chunk_size: int = 512) -> NeighborTable:
    """Precompute the k nearest faces of every face under the chosen metric.

    Geodesic distances are single-source shortest paths on the face-adjacency
    graph; Euclidean distances are straight centroid-to-centroid chords.
    Output is deterministic: rows sorted by (distance, face id). Faces
    unreachable from a source (disconnected template) are reported once and
    the affected rows keep their reachable prefix, padded with inf.
    """
    n_f = mesh.n_faces
    if not 0 < k < n_f:
        raise ValueError(f"k must be in (0, {n_f}), got {k}")
    if metric not in (GEODESIC, EUCLIDEAN):
        raise ValueError(f"unknown metric {metric!r}")

    cent = mesh.face_centroids()
    ids = np.empty((n_f, k), dtype=np.int32)
    dists = np.empty((n_f, k), dtype=np.float32)
    graph = face_adjacency_graph(mesh) if metric == GEODESIC else None

    short_rows = 0
    for start in range(0, n_f, chunk_size):
        sources = np.arange(start, min(start + chunk_size, n_f))
        if metric == GEODESIC:
            block = dijkstra(graph, directed=True, indices=sources)
        else:
            block = cdist(cent[sources], cent)
        for local, src in enumerate(sources):
            full = _truncate_row(block[local], int(src), k, ids[src], dists[src])
            if not full:
                short_rows += 1

    if short_rows:
        logger.warning(
            "%d of %d faces cannot reach %d neighbors (disconnected mesh); "
            "rows padded with the reachable prefix", short_rows, n_f, k,
        )
    return NeighborTable(metric, ids, dists)


def nearest_faces(table: NeighborTable, face_id: int, n: int) -> np.ndarray:
    """First ``n`` table entries for one face, nearest first.

    Padded (unreachable) slots are dropped, so fewer than ``n`` ids may come
    back on disconnected meshes.
    """
    if not 0 <= face_id < table.n_faces:
        raise ValueError(f"face id {face_id} out of range [0, {table.n_faces})")
    if n > table.k:
        raise ValueError(
            f"n={n} exceeds the table's k={table.k}; rebuild the table with a larger k"
        )
    row = table.neighbor_ids[face_id, :n]
    return row[row != PAD_ID]


# ---------------------------------------------------------------------------
# Disk format: FNT1
# ---------------------------------------------------------------------------

_ROW_DTYPE = np.dtype([("id", "<u4"), ("dist", "<f4")])


def save_table(path, table: NeighborTable) -> None:
    with open(path, "wb") as fh:
        fh.write(FNT_MAGIC)
        fh.write(_METRIC_BYTES[table.metric_tag])
        fh.write(struct.pack("<II", table.n_faces, table.k))
        rows = np.empty(table.neighbor_ids.shape, dtype=_ROW_DTYPE)
        # int32 -1 pads map to 0xFFFFFFFF on disk and back again on load
        rows["id"] = np.ascontiguousarray(table.neighbor_ids, dtype=np.int32).view(np.uint32)
        rows["dist"] = table.neighbor_dists
        fh.write(rows.tobytes())


def read_table_header(path) -> tuple[str, int, int]:
    """(metric_tag, n_faces, k) without loading the body."""
    with open(path, "rb") as fh:
        magic = fh.read(len(FNT_MAGIC))
        if magic != FNT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {FNT_MAGIC!r}")
        mb = fh.read(1)
        if mb not in _BYTE_METRICS:
            raise ValueError(f"{path}: unknown metric byte {mb!r}")
        n_f, k = struct.unpack("<II", fh.read(8))
    return _BYTE_METRICS[mb], n_f, k


def load_table(path, validate_rows: int = 64) -> NeighborTable:
    """Load an FNT1 file; spot-checks row sortedness on an evenly spaced sample."""
    metric, n_f, k = read_table_header(path)
    with open(path, "rb") as fh:
        fh.seek(len(FNT_MAGIC) + 1 + 8)
        body = fh.read(n_f * k * _ROW_DTYPE.itemsize)
    if len(body) != n_f * k * _ROW_DTYPE.itemsize:
        raise ValueError(f"{path}: truncated table file")
    rows = np.frombuffer(body, dtype=_ROW_DTYPE).reshape(n_f, k)
    ids = rows["id"].view(np.int32).copy()
    dists = rows["dist"].copy()
    table = NeighborTable(metric, ids, dists)

    if n_f and validate_rows:
        sample = np.unique(np.linspace(0, n_f - 1, min(validate_rows, n_f)).astype(int))
        d = dists[sample]
        # inf-padded tails produce nan diffs; those slots are exempt
        steps = np.diff(d, axis=1)
        if not np.all((steps >= 0) | ~np.isfinite(d[:, 1:])):
            raise ValueError(f"{path}: table rows are not sorted; file corrupt?")
        if np.any(ids[sample] == sample[:, None]):
            raise ValueError(f"{path}: table row contains its own face id; file corrupt?")
    return table
