"""End-to-end job orchestration: load, rasterize, transfer, flow, compose, score.

Stages communicate exclusively through files in the output directory, so any
stage can be re-run on cached upstream artifacts and byte-identical outputs
certify reproducibility. The worker pool size comes from MESHWARP_THREADS
(results are merged by frame index, so the count never changes outputs).
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import imgio
from .geodesy import load_table, read_table_header
from .mesh import BodyMesh, load_mesh, load_mesh_sequence, load_sym_pairs
from .metrics import evaluate_sequence, masked_metric, psnr, ssim
from .motion import FlowField, flow_between, flow_to_rgb, composite, temporal_compose
from .raster import Camera, FaceBuffer, mask_of, rasterize, segmentation_of
from .transfer import (MODES, provenance_image, save_transfer_stats,
                       step1_accumulate, step2_fill, step3_symmetric)

STAGES = ("raster", "transfer", "flow", "compose", "metrics")


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get("MESHWARP_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


@dataclass
class JobConfig:
    """One synthesis job; all paths are resolved against ``base_dir``."""

    input_frames_dir: str
    input_camera: str
    target_camera: str
    mesh_sequence: str
    template_mesh: str
    face_labels: str
    sym_pairs: str
    neighbor_table: str
    output_dir: str
    mode: str = "I+II+III"
    n: int = 50
    zeta: float = 0.1
    target_gt_dir: str | None = None
    background: str | None = None
    neighbor_table_euclidean: str | None = None
    base_dir: str = "."

    @classmethod
    def from_json(cls, path) -> "JobConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            input_frames_dir=d["input"]["frames_dir"],
            input_camera=d["input"]["camera"],
            target_camera=d["target"]["camera"],
            target_gt_dir=d["target"].get("gt_frames_dir"),
            mesh_sequence=d["mesh_sequence"],
            template_mesh=d["template_mesh"],
            face_labels=d["face_labels"],
            sym_pairs=d["sym_pairs"],
            neighbor_table=d["neighbor_table"],
            neighbor_table_euclidean=d.get("neighbor_table_euclidean"),
            mode=d.get("mode", "I+II+III"),
            n=int(d.get("n", 50)),
            zeta=float(d.get("zeta", 0.1)),
            background=d.get("background"),
            output_dir=d["output_dir"],
            base_dir=str(path.parent),
        )

    def to_json(self) -> dict:
        return {
            "input": {"frames_dir": self.input_frames_dir, "camera": self.input_camera},
            "target": {"camera": self.target_camera, "gt_frames_dir": self.target_gt_dir},
            "mesh_sequence": self.mesh_sequence,
            "template_mesh": self.template_mesh,
            "face_labels": self.face_labels,
            "sym_pairs": self.sym_pairs,
            "neighbor_table": self.neighbor_table,
            "neighbor_table_euclidean": self.neighbor_table_euclidean,
            "mode": self.mode, "n": self.n, "zeta": self.zeta,
            "background": self.background,
            "output_dir": self.output_dir,
        }

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        """Fail fast, before any compute."""
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        required = {
            "input frames dir": self.input_frames_dir,
            "input camera": self.input_camera,
            "target camera": self.target_camera,
            "mesh sequence": self.mesh_sequence,
            "template mesh": self.template_mesh,
            "face labels": self.face_labels,
            "symmetric pairs": self.sym_pairs,
            "neighbor table": self.neighbor_table,
        }
        for what, rel in required.items():
            if not rel:
                raise ValueError(f"{what} path missing from config")
            if not self.path(rel).exists():
                raise FileNotFoundError(f"{what} not found: {self.path(rel)}")
        if self.target_gt_dir and not self.path(self.target_gt_dir).exists():
            raise FileNotFoundError(f"ground-truth dir not found: {self.path(self.target_gt_dir)}")
        if self.background and not self.path(self.background).exists():
            raise FileNotFoundError(f"background plate not found: {self.path(self.background)}")
        metric, _, k = read_table_header(self.active_table_path())
        want = "euclidean" if self.mode == "euclidean-II" else "geodesic"
        if metric != want:
            raise ValueError(
                f"mode {self.mode} needs a {want} table, {self.active_table_path()} is {metric}"
            )
        if self.n > k:
            raise ValueError(f"n={self.n} exceeds the table's k={k}")

    def active_table_path(self) -> Path:
        if self.mode == "euclidean-II":
            return self.path(self.neighbor_table_euclidean or self.neighbor_table)
        return self.path(self.neighbor_table)


def _frame_name(t: int) -> str:
    return f"{t:06d}"


def _frame_scoped(fn):
    """Tag per-frame worker failures with the frame index."""
    def wrapped(t):
        try:
            return fn(t)
        except Exception as exc:
            raise RuntimeError(f"frame {t}: {exc}") from exc
    return wrapped


class _Job:
    """Loaded inputs + artifact layout for one pipeline run."""

    def __init__(self, cfg: JobConfig):
        cfg.validate()
        self.cfg = cfg
        self.out = cfg.path(cfg.output_dir)
        self.mesh: BodyMesh = load_mesh(cfg.path(cfg.template_mesh), cfg.path(cfg.face_labels))
        self.sym = load_sym_pairs(cfg.path(cfg.sym_pairs))
        if not self.sym.covers(self.mesh.face_labels):
            missing = [int(l) for l in np.unique(self.mesh.face_labels) if int(l) not in self.sym.pairs]
            raise ValueError(f"symmetric-part map misses labels {missing}")
        self.seq = load_mesh_sequence(cfg.path(cfg.mesh_sequence), faces=self.mesh.faces)
        if self.seq.n_vertices != self.mesh.n_vertices:
            raise ValueError(
                f"sequence has {self.seq.n_vertices} vertices, template {self.mesh.n_vertices}"
            )
        self.cam_input = Camera.load(cfg.path(cfg.input_camera))
        self.cam_target = Camera.load(cfg.path(cfg.target_camera))
        self.frames = imgio.load_frame_dir(cfg.path(cfg.input_frames_dir))
        if len(self.frames) != len(self.seq):
            raise ValueError(
                f"{len(self.frames)} input frames but {len(self.seq)} mesh frames"
            )
        self.n_frames = len(self.seq)

    def dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d


def _stage_raster(job: _Job, threads: int, artifacts: dict) -> None:
    dirs = {name: job.dir(name) for name in
            ("input_fb", "target_fb", "mask", "depth", "seg")}

    def one(t: int) -> list[str]:
        name = _frame_name(t)
        buf_in = rasterize(job.seq.frames[t], job.mesh.faces, job.cam_input)
        buf_tg = rasterize(job.seq.frames[t], job.mesh.faces, job.cam_target)
        buf_in.save(dirs["input_fb"] / f"{name}.fb")
        buf_tg.save(dirs["target_fb"] / f"{name}.fb")
        imgio.save_png(dirs["mask"] / f"{name}.png", mask_of(buf_tg) * 255)
        imgio.save_depth_png(dirs["depth"] / f"{name}.png", buf_tg.depth)
        imgio.save_label_png(dirs["seg"] / f"{name}.png", segmentation_of(buf_tg, job.mesh))
        return [f"input_fb/{name}.fb", f"target_fb/{name}.fb", f"mask/{name}.png",
                f"depth/{name}.png", f"seg/{name}.png"]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        produced = list(pool.map(_frame_scoped(one), range(job.n_frames)))
    artifacts["raster"] = sorted(p for frame in produced for p in frame)


def _load_buffers(job: _Job, sub: str) -> list[FaceBuffer]:
    return [FaceBuffer.load(job.out / sub / f"{_frame_name(t)}.fb")
            for t in range(job.n_frames)]


def _stage_transfer(job: _Job, threads: int, artifacts: dict) -> None:
    cfg = job.cfg
    table = load_table(cfg.active_table_path())
    input_bufs = _load_buffers(job, "input_fb")
    target_bufs = _load_buffers(job, "target_fb")
    use_sym = cfg.mode in ("II+III", "I+II+III")
    full_acc = (step1_accumulate(job.frames, input_bufs)
                if cfg.mode == "I+II+III" else None)
    dirs = {name: job.dir(name) for name in ("texture", "provenance", "stats")}

    def one(t: int) -> list[str]:
        acc = full_acc if full_acc is not None else step1_accumulate(
            [job.frames[t]], [input_bufs[t]])
        result = step2_fill(acc, target_bufs[t], job.mesh, table, cfg.n)
        if use_sym:
            result = step3_symmetric(result, target_bufs[t], job.mesh, job.sym)
        name = _frame_name(t)
        imgio.save_png(dirs["texture"] / f"{name}.png", result.texture)
        imgio.save_png(dirs["provenance"] / f"{name}.png", provenance_image(result))
        save_transfer_stats(dirs["stats"] / f"{name}.json", result)
        return [f"texture/{name}.png", f"provenance/{name}.png", f"stats/{name}.json"]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        produced = list(pool.map(_frame_scoped(one), range(job.n_frames)))
    artifacts["transfer"] = sorted(p for frame in produced for p in frame)


def _stage_flow(job: _Job, threads: int, artifacts: dict) -> None:
    target_bufs = _load_buffers(job, "target_fb")
    flow_dir = job.dir("flow")
    viz_dir = job.dir("flow_viz")

    def one(t: int) -> list[str]:
        # flow file t maps frame t back to frame t-1
        name = _frame_name(t)
        flow = flow_between(target_bufs[t - 1], target_bufs[t])
        flow.save(flow_dir / f"{name}.flo")
        imgio.save_png(viz_dir / f"{name}.png", flow_to_rgb(flow))
        return [f"flow/{name}.flo", f"flow_viz/{name}.png"]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        produced = list(pool.map(_frame_scoped(one), range(1, job.n_frames)))
    artifacts["flow"] = sorted(p for frame in produced for p in frame)


def _stage_compose(job: _Job, threads: int, artifacts: dict) -> None:
    cfg = job.cfg
    composed_dir = job.dir("composed")
    if cfg.background:
        bg = imgio.load_png(cfg.path(cfg.background))
        if bg.shape[:2] != (job.cam_target.height, job.cam_target.width):
            raise ValueError(
                f"background plate {bg.shape[:2]} does not match the target view "
                f"({job.cam_target.height}, {job.cam_target.width})"
            )
    else:
        bg = np.zeros((job.cam_target.height, job.cam_target.width, 3), dtype=np.uint8)

    produced = []
    prev_fg: np.ndarray | None = None
    for t in range(job.n_frames):
        name = _frame_name(t)
        texture = imgio.load_png(job.out / "texture" / f"{name}.png").astype(np.float64)
        if t == 0 or cfg.zeta == 0.0:
            fg = texture
        else:
            flow = FlowField.load(job.out / "flow" / f"{name}.flo")
            fg = temporal_compose(texture, prev_fg, flow, cfg.zeta)
        prev_fg = fg
        mask = imgio.load_png(job.out / "mask" / f"{name}.png")[:, :, 0] > 0
        frame = composite(np.rint(fg).astype(np.uint8), bg, mask.astype(np.uint8))
        imgio.save_png(composed_dir / f"{name}.png", frame)
        produced.append(f"composed/{name}.png")
    artifacts["compose"] = produced


def _stage_metrics(job: _Job, threads: int, artifacts: dict) -> None:
    cfg = job.cfg
    if not cfg.target_gt_dir:
        artifacts["metrics"] = []
        return
    gt = imgio.load_frame_dir(cfg.path(cfg.target_gt_dir))
    if len(gt) != job.n_frames:
        raise ValueError(f"{len(gt)} ground-truth frames but {job.n_frames} outputs")
    pred = [imgio.load_png(job.out / "composed" / f"{_frame_name(t)}.png")
            for t in range(job.n_frames)]
    masks = [imgio.load_png(job.out / "mask" / f"{_frame_name(t)}.png")[:, :, 0] > 0
             for t in range(job.n_frames)]
    report = evaluate_sequence(pred, gt, masks)
    report.save(job.out / "report.json")
    artifacts["metrics"] = ["report.json"]


_STAGE_FNS = {
    "raster": _stage_raster,
    "transfer": _stage_transfer,
    "flow": _stage_flow,
    "compose": _stage_compose,
    "metrics": _stage_metrics,
}


def run_pipeline(cfg: JobConfig, stages=None, threads: int | None = None) -> dict:
    """Run the job and return its manifest (also written to manifest.json).

    ``stages`` selects a subset (upstream artifacts must already exist on
    disk); a stage failure still writes the manifest, marked incomplete with
    the failing stage recorded.
    """
    job = _Job(cfg)
    nthreads = worker_count(threads)
    run_stages = STAGES if stages is None else tuple(stages)
    for s in run_stages:
        if s not in _STAGE_FNS:
            raise ValueError(f"unknown stage {s!r}, expected subset of {STAGES}")

    manifest = {
        "config": cfg.to_json(),
        "config_hash": cfg.config_hash(),
        "frames": job.n_frames,
        "stages_run": list(run_stages),
        "artifacts": {},
        "complete": False,
        "failure": None,
    }

    def write_manifest():
        with open(job.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    for stage in run_stages:
        try:
            _STAGE_FNS[stage](job, nthreads, manifest["artifacts"])
        except Exception as exc:
            manifest["failure"] = {"stage": stage, "error": str(exc)}
            write_manifest()
            raise RuntimeError(f"stage {stage!r} failed: {exc}") from exc
    manifest["complete"] = True
    write_manifest()
    return manifest


def ablation_report(cfg: JobConfig, modes, n_values, threads: int | None = None) -> list[dict]:
    """Masked foreground quality of the transfer texture per (mode, n) cell.

    Rasterization artifacts are shared across cells; each cell re-runs only
    the transfer stage into its own subdirectory and scores the texture
    against the target-view ground truth inside the target mask. Requires
    ground truth and, for the Euclidean cell, a Euclidean table.
    """
    if not cfg.target_gt_dir:
        raise ValueError("ablation needs target ground-truth frames")
    base_out = cfg.path(cfg.output_dir)
    raster_cfg = replace(cfg, output_dir=str(base_out / "shared"))
    run_pipeline(raster_cfg, stages=("raster",), threads=threads)

    gt = imgio.load_frame_dir(cfg.path(cfg.target_gt_dir))
    masks = [imgio.load_png(base_out / "shared" / "mask" / f"{_frame_name(t)}.png")[:, :, 0] > 0
             for t in range(len(gt))]

    rows = []
    for mode in modes:
        for n in n_values:
            cell = replace(cfg, mode=mode, n=int(n), output_dir=str(base_out / "shared"))
            run_pipeline(cell, stages=("transfer",), threads=threads)
            cell_dir = base_out / f"{mode.replace('+', '_')}_n{n}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            m_ssim, m_psnr = [], []
            for t in range(len(gt)):
                tex_path = base_out / "shared" / "texture" / f"{_frame_name(t)}.png"
                tex = imgio.load_png(tex_path)
                imgio.save_png(cell_dir / f"{_frame_name(t)}.png", tex)
                m_ssim.append(masked_metric(ssim, tex, gt[t], masks[t]))
                m_psnr.append(masked_metric(psnr, tex, gt[t], masks[t]))
            rows.append({
                "mode": mode, "n": int(n),
                "masked_ssim": float(np.mean(m_ssim)),
                "masked_psnr": float(np.mean(m_psnr)),
            })

    report_dir = base_out
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(report_dir / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("mode,n,masked_ssim,masked_psnr\n")
        for r in rows:
            fh.write(f"{r['mode']},{r['n']},{r['masked_ssim']:.6f},{r['masked_psnr']:.6f}\n")
    return rows
