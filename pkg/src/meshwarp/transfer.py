"""Symmetric texture transfer between camera views via shared face identity.

Three stages:

* step 1 builds a face -> RGB hashmap from the input view by accumulating
  every pixel of every visible face over time and reducing with the
  per-channel median;
* step 2 paints the target view: direct copy where the target face was seen,
  otherwise the first of the n nearest faces (precomputed distance table)
  that was seen;
* step 3 resolves remaining occlusions through symmetric body parts, copying
  the visibly painted pixel of the (mirrored) part closest in the image
  plane, and marks anything still unpaintable with a sentinel.

Every painted pixel carries a provenance code so downstream consumers never
have to guess how a color was produced.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geodesy import EUCLIDEAN, GEODESIC, NeighborTable
from .mesh import BodyMesh, SymmetricPartMap
from .raster import NONE_ID, FaceBuffer

# provenance codes, also the palette index of the provenance PNG
BACKGROUND = 0
DIRECT = 1
NEIGHBOR = 2
SYMMETRIC = 3
SENTINEL = 4

SENTINEL_COLOR = (255, 0, 255)

PROVENANCE_PALETTE = np.array(
    [(0, 0, 0),        # background
     (60, 180, 75),    # direct
     (0, 130, 200),    # neighbor
     (245, 130, 48),   # symmetric
     (255, 0, 255)],   # sentinel
    dtype=np.uint8,
)

MODES = ("euclidean-II", "geodesic-II", "II+III", "I+II+III")


@dataclass
class TextureAccumulator:
    """Face -> pixel-sample hashmap with its median reduction.

    ``samples[f]`` is the (m, 3) uint8 stack of every pixel of face ``f``
    observed in the input view (all pixels of a frame, all frames, in frame
    then row-major order). ``reduced[f]`` is the per-channel median; even
    sample counts take the lower median so values stay observed ones.
    """

    samples: dict[int, np.ndarray]
    reduced: dict[int, np.ndarray]


def _lower_median(stack: np.ndarray) -> np.ndarray:
    # per-channel independent sort; row (m-1)//2 is the lower median
    return np.sort(stack, axis=0)[(len(stack) - 1) // 2]


def step1_accumulate(frames, bufs) -> TextureAccumulator:
    """Harvest the input view: every (face, pixel) occurrence of every frame.

    ``frames`` are (h, w, 3) uint8 images, ``bufs`` the matching face
    buffers. A face visible at several pixels in one frame contributes all
    of them; no per-frame pre-averaging happens before the final median.
    """
    if len(frames) != len(bufs):
        raise ValueError(f"{len(frames)} frames but {len(bufs)} face buffers")
    ids_parts: list[np.ndarray] = []
    rgb_parts: list[np.ndarray] = []
    for i, (frame, buf) in enumerate(zip(frames, bufs)):
        frame = np.asarray(frame)
        if frame.shape[:2] != buf.face_id.shape:
            raise ValueError(
                f"frame {i} is {frame.shape[:2]}, face buffer is {buf.face_id.shape}"
            )
        fg = buf.face_id != NONE_ID
        ids_parts.append(buf.face_id[fg])
        rgb_parts.append(frame[fg])

    samples: dict[int, np.ndarray] = {}
    reduced: dict[int, np.ndarray] = {}
    if ids_parts:
        ids = np.concatenate(ids_parts)
        rgb = np.concatenate(rgb_parts)
        if len(ids):
            order = np.argsort(ids, kind="stable")  # keeps frame order within a face
            ids_sorted = ids[order]
            rgb_sorted = rgb[order]
            uniq, starts = np.unique(ids_sorted, return_index=True)
            for face, chunk in zip(uniq, np.split(rgb_sorted, starts[1:])):
                samples[int(face)] = chunk
                reduced[int(face)] = _lower_median(chunk)
    return TextureAccumulator(samples, reduced)


@dataclass
class TransferResult:
    """One transferred target frame plus its bookkeeping.

    ``label_pixels`` maps a part label to the (colors, positions) of the
    pixels painted for it in step 2 (positions are (x, y), insertion in
    row-major scan order). Neighbor-filled pixels are recorded under the
    donor face's label, mirroring the reference procedure, unless the fill
    was run with the direct-only pool flag. ``occluded`` lists the pixels
    the current stage could not paint.
    """

    texture: np.ndarray      # (h, w, 3) uint8
    filled_by: np.ndarray    # (h, w) uint8 provenance codes
    label_pixels: dict[int, tuple[np.ndarray, np.ndarray]]
    occluded: np.ndarray     # (m, 2) int32 (x, y), row-major order

    def provenance_counts(self) -> dict[str, int]:
        names = ["background", "direct", "neighbor", "symmetric", "sentinel"]
        counts = np.bincount(self.filled_by.reshape(-1), minlength=5)
        return {name: int(c) for name, c in zip(names, counts)}


def step2_fill(acc: TextureAccumulator, target_buf: FaceBuffer, mesh: BodyMesh,
               table: NeighborTable, n: int, *,
               label_pool_direct_only: bool = False) -> TransferResult:
    """Paint the target view from the accumulator, filling via nearest faces.

    Per foreground pixel with face f: paint ``reduced[f]`` when present
    (DIRECT); otherwise scan the n nearest faces of f in table order and
    paint the first one present (NEIGHBOR, recorded under the donor's
    label); otherwise the pixel is occluded (SENTINEL color until step 3
    repaints it).
    """
    if n > table.k:
        raise ValueError(f"n={n} exceeds the table's k={table.k}; rebuild the table with a larger k")
    if table.n_faces != mesh.n_faces:
        raise ValueError(f"table built for {table.n_faces} faces, mesh has {mesh.n_faces}")

    n_f = mesh.n_faces
    seeded = np.zeros(n_f, dtype=bool)
    colors = np.zeros((n_f, 3), dtype=np.uint8)
    for face, rgb in acc.reduced.items():
        seeded[face] = True
        colors[face] = rgb

    fid = target_buf.face_id
    fg = fid != NONE_ID

    # resolve once per distinct target face, then splat to pixels
    donor_of = np.full(n_f, NONE_ID, dtype=np.int32)
    present = np.unique(fid[fg])
    if len(present):
        direct = seeded[present]
        donor_of[present[direct]] = present[direct]
        missing = present[~direct]
        if len(missing) and n > 0:
            rows = table.neighbor_ids[missing, :n]
            hit = (rows != NONE_ID) & seeded[np.clip(rows, 0, n_f - 1)]
            has = hit.any(axis=1)
            first = hit.argmax(axis=1)
            donor_of[missing[has]] = rows[np.arange(len(missing))[has], first[has]]

    texture = np.zeros(fid.shape + (3,), dtype=np.uint8)
    filled_by = np.full(fid.shape, BACKGROUND, dtype=np.uint8)
    donor_px = np.where(fg, donor_of[np.clip(fid, 0, n_f - 1)], NONE_ID)

    painted = fg & (donor_px != NONE_ID)
    direct_px = painted & (donor_px == fid)
    neighbor_px = painted & ~direct_px
    occluded_px = fg & ~painted

    texture[painted] = colors[donor_px[painted]]
    texture[occluded_px] = SENTINEL_COLOR
    filled_by[direct_px] = DIRECT
    filled_by[neighbor_px] = NEIGHBOR
    filled_by[occluded_px] = SENTINEL

    pool_px = direct_px if label_pool_direct_only else painted
    label_pixels = _group_label_pixels(pool_px, donor_px, texture, mesh)

    occ_yx = np.argwhere(occluded_px)
    occluded = occ_yx[:, ::-1].astype(np.int32)  # row-major (x, y)
    return TransferResult(texture, filled_by, label_pixels, occluded)


def _group_label_pixels(pool_px: np.ndarray, donor_px: np.ndarray, texture: np.ndarray,
                        mesh: BodyMesh) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    label_pixels: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    yx = np.argwhere(pool_px)  # row-major
    if not len(yx):
        return label_pixels
    labels = mesh.face_labels[donor_px[pool_px]]
    cols = texture[pool_px]
    pos = yx[:, ::-1].astype(np.int32)
    order = np.argsort(labels, kind="stable")  # row-major order preserved per label
    labels, cols, pos = labels[order], cols[order], pos[order]
    uniq, starts = np.unique(labels, return_index=True)
    for lab, col_chunk, pos_chunk in zip(
            uniq, np.split(cols, starts[1:]), np.split(pos, starts[1:])):
        label_pixels[int(lab)] = (col_chunk, pos_chunk)
    return label_pixels


class _GridIndex:
    """Uniform-grid nearest-pixel search equal to the brute-force argmin.

    Ties on squared distance resolve to the lowest insertion index, exactly
    as ``np.argmin`` over the flat pool does.
    """

    def __init__(self, positions: np.ndarray, cell: int = 16):
        self.cell = cell
        self.pos = positions.astype(np.int64)
        keys = self.pos // cell
        self.buckets: dict[tuple[int, int], np.ndarray] = {}
        flat = keys[:, 0] * (1 << 32) + keys[:, 1]
        order = np.argsort(flat, kind="stable")
        sorted_keys = keys[order]
        starts = np.flatnonzero(
            np.r_[True, (sorted_keys[1:] != sorted_keys[:-1]).any(axis=1)])
        for s, e in zip(starts, np.r_[starts[1:], len(order)]):
            self.buckets[tuple(sorted_keys[s])] = order[s:e]

    def query(self, x: int, y: int) -> int:
        cx, cy = x // self.cell, y // self.cell
        span = int(np.abs(self.pos - np.array([x, y])).max()) // self.cell + 2
        best_d2 = None
        best_idx = -1
        for ring in range(span + 1):
            for kx in range(cx - ring, cx + ring + 1):
                for ky in range(cy - ring, cy + ring + 1):
                    if max(abs(kx - cx), abs(ky - cy)) != ring:
                        continue
                    idxs = self.buckets.get((kx, ky))
                    if idxs is None:
                        continue
                    p = self.pos[idxs]
                    d2 = (p[:, 0] - x) ** 2 + (p[:, 1] - y) ** 2
                    cand_d2 = int(d2.min())
                    # np.argmin tie-break: smallest insertion index wins
                    cand_idx = int(idxs[d2 == cand_d2].min())
                    if best_d2 is None or (cand_d2, cand_idx) < (best_d2, best_idx):
                        best_d2, best_idx = cand_d2, cand_idx
            if best_d2 is not None:
                # a closer match can hide in rings up to sqrt(d2)/cell + 1 only
                safe_ring = int(np.floor(np.sqrt(best_d2) / self.cell)) + 1
                if ring >= safe_ring:
                    return best_idx
        return best_idx


def step3_symmetric(partial: TransferResult, target_buf: FaceBuffer, mesh: BodyMesh,
                    sym: SymmetricPartMap, *, use_grid_index: bool = False) -> TransferResult:
    """Repaint occluded pixels from their own or mirrored part's painted pixels.

    For an occluded pixel with part label l: if step 2 painted no pixel of
    l, l is replaced by its mirror; if that pool is empty too the pixel
    keeps the sentinel. Otherwise the pool entry closest in the image plane
    donates its color (provenance SYMMETRIC). Equidistant pool entries
    resolve to the earliest-painted one.
    """
    texture = partial.texture.copy()
    filled_by = partial.filled_by.copy()
    still_occluded: list[np.ndarray] = []

    if len(partial.occluded):
        xs = partial.occluded[:, 0]
        ys = partial.occluded[:, 1]
        own = mesh.face_labels[target_buf.face_id[ys, xs]]
        pool_label = np.empty(len(own), dtype=np.int64)
        for i, lab in enumerate(own):
            lab = int(lab)
            if lab in partial.label_pixels:
                pool_label[i] = lab
            else:
                mirrored = sym.mirror(lab)
                pool_label[i] = mirrored if mirrored in partial.label_pixels else -1

        for lab in np.unique(pool_label):
            sel = pool_label == lab
            if lab == -1:
                still_occluded.append(partial.occluded[sel])
                continue  # sentinel stays in place
            cols, pos = partial.label_pixels[int(lab)]
            qx, qy = xs[sel], ys[sel]
            if use_grid_index:
                grid = _GridIndex(pos)
                nearest = np.array([grid.query(int(a), int(b)) for a, b in zip(qx, qy)])
            else:
                d2 = (
                    (qx[:, None].astype(np.int64) - pos[None, :, 0]) ** 2
                    + (qy[:, None].astype(np.int64) - pos[None, :, 1]) ** 2
                )
                nearest = d2.argmin(axis=1)
            texture[qy, qx] = cols[nearest]
            filled_by[qy, qx] = SYMMETRIC

    occluded = (np.concatenate(still_occluded) if still_occluded
                else np.zeros((0, 2), dtype=np.int32))
    return TransferResult(texture, filled_by, partial.label_pixels, occluded)


def _mode_table_metric(mode: str) -> str:
    return EUCLIDEAN if mode == "euclidean-II" else GEODESIC


def transfer_sequence(frames, input_bufs, target_bufs, mesh: BodyMesh,
                      table: NeighborTable, sym: SymmetricPartMap | None,
                      n: int, mode: str, *, threads: int = 1) -> list[TransferResult]:
    """Run one of the four transfer variants over a frame sequence.

    ``I+II+III`` accumulates over the whole sequence before painting; the
    other modes rebuild the hashmap from the current frame only (no temporal
    context). ``euclidean-II`` additionally requires a Euclidean table; the
    remaining modes a geodesic one.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if len(frames) != len(input_bufs) or len(input_bufs) != len(target_bufs):
        raise ValueError(
            f"sequence length mismatch: {len(frames)} frames, "
            f"{len(input_bufs)} input buffers, {len(target_bufs)} target buffers"
        )
    want_metric = _mode_table_metric(mode)
    if table.metric_tag != want_metric:
        raise ValueError(f"mode {mode} needs a {want_metric} table, got {table.metric_tag}")
    use_sym = mode in ("II+III", "I+II+III")
    if use_sym and sym is None:
        raise ValueError(f"mode {mode} requires a symmetric-part map")

    full_acc = step1_accumulate(frames, input_bufs) if mode == "I+II+III" else None

    def run_frame(t: int) -> TransferResult:
        acc = full_acc if full_acc is not None else step1_accumulate([frames[t]], [input_bufs[t]])
        result = step2_fill(acc, target_bufs[t], mesh, table, n)
        if use_sym:
            result = step3_symmetric(result, target_bufs[t], mesh, sym)
        return result

    indices = range(len(target_bufs))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_frame, indices))
    return [run_frame(t) for t in indices]


def provenance_image(result: TransferResult) -> np.ndarray:
    """Palette-coded provenance visualization."""
    return PROVENANCE_PALETTE[result.filled_by]


def save_transfer_stats(path, result: TransferResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.provenance_counts(), fh, indent=2, sort_keys=True)
        fh.write("\n")
