"""Command-line entry points.

Subcommands mirror the pipeline stages plus scene/table precompute:
geodesic, render, transfer, flow, compose, metrics, synth, ablate, run.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import imgio
from .geodesy import EUCLIDEAN, GEODESIC, build_neighbor_table, load_table, save_table
from .mesh import load_mesh, load_mesh_sequence, load_sym_pairs
from .metrics import evaluate_sequence
from .motion import FlowField, flow_between, flow_to_rgb
from .pipeline import STAGES, JobConfig, ablation_report, run_pipeline, worker_count
from .raster import Camera, FaceBuffer, mask_of, rasterize, segmentation_of, shade
from .synthetic import SceneSpec, make_synthetic
from .transfer import MODES, provenance_image, save_transfer_stats, transfer_sequence


def _cmd_geodesic(args) -> int:
    mesh = load_mesh(args.mesh, args.labels)
    table = build_neighbor_table(mesh, k=args.k, metric=args.metric)
    save_table(args.output, table)
    print(f"wrote {args.output}: {table.n_faces} faces x k={table.k} ({table.metric_tag})")
    return 0


def _cmd_render(args) -> int:
    mesh = load_mesh(args.template, args.labels)
    seq = load_mesh_sequence(args.sequence, faces=mesh.faces)
    cam = Camera.load(args.camera)
    out = Path(args.output)
    for sub in ("fb", "mask", "depth", "seg") + (("shade",) if args.shade else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for t in range(len(seq)):
        buf = rasterize(seq.frames[t], mesh.faces, cam)
        name = f"{t:06d}"
        buf.save(out / "fb" / f"{name}.fb")
        imgio.save_png(out / "mask" / f"{name}.png", mask_of(buf) * 255)
        imgio.save_depth_png(out / "depth" / f"{name}.png", buf.depth)
        imgio.save_label_png(out / "seg" / f"{name}.png", segmentation_of(buf, mesh))
        if args.shade:
            imgio.save_png(out / "shade" / f"{name}.png",
                           shade(buf, seq.frames[t], mesh.faces, cam))
    print(f"rendered {len(seq)} frames into {out}")
    return 0


def _load_fb_dir(path) -> list[FaceBuffer]:
    files = sorted(p for p in Path(path).iterdir() if p.suffix == ".fb")
    if not files:
        raise ValueError(f"no .fb files in {path}")
    return [FaceBuffer.load(p) for p in files]


def _cmd_transfer(args) -> int:
    mesh = load_mesh(args.template, args.labels)
    sym = load_sym_pairs(args.sym) if args.sym else None
    table = load_table(args.table)
    frames = imgio.load_frame_dir(args.frames)
    input_bufs = _load_fb_dir(args.input_fb)
    target_bufs = _load_fb_dir(args.target_fb)
    results = transfer_sequence(frames, input_bufs, target_bufs, mesh, table, sym,
                                n=args.n, mode=args.mode, threads=worker_count(args.threads))
    out = Path(args.output)
    for sub in ("texture", "provenance", "stats"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for t, result in enumerate(results):
        name = f"{t:06d}"
        imgio.save_png(out / "texture" / f"{name}.png", result.texture)
        imgio.save_png(out / "provenance" / f"{name}.png", provenance_image(result))
        save_transfer_stats(out / "stats" / f"{name}.json", result)
    print(f"transferred {len(results)} frames ({args.mode}, n={args.n}) into {out}")
    return 0


def _cmd_flow(args) -> int:
    bufs = _load_fb_dir(args.fb)
    out = Path(args.output)
    (out / "flow").mkdir(parents=True, exist_ok=True)
    (out / "flow_viz").mkdir(parents=True, exist_ok=True)
    for t in range(1, len(bufs)):
        flow = flow_between(bufs[t - 1], bufs[t])
        name = f"{t:06d}"
        flow.save(out / "flow" / f"{name}.flo")
        imgio.save_png(out / "flow_viz" / f"{name}.png", flow_to_rgb(flow))
    print(f"wrote {len(bufs) - 1} flow fields into {out}")
    return 0


def _cmd_compose(args) -> int:
    from .motion import composite, temporal_compose

    textures = sorted(p for p in Path(args.texture).iterdir() if p.suffix == ".png")
    masks = sorted(p for p in Path(args.mask).iterdir() if p.suffix == ".png")
    if len(textures) != len(masks):
        raise ValueError("texture/mask frame counts differ")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    bg = imgio.load_png(args.background) if args.background else None
    prev = None
    for t, (tex_path, mask_path) in enumerate(zip(textures, masks)):
        tex = imgio.load_png(tex_path).astype(np.float64)
        if t == 0 or args.zeta == 0.0:
            fg = tex
        else:
            flow = FlowField.load(Path(args.flow) / f"{t:06d}.flo")
            fg = temporal_compose(tex, prev, flow, args.zeta)
        prev = fg
        mask = imgio.load_png(mask_path)[:, :, 0] > 0
        plate = bg if bg is not None else np.zeros_like(tex, dtype=np.uint8)
        frame = composite(np.rint(fg).astype(np.uint8), plate, mask.astype(np.uint8))
        imgio.save_png(out / f"{t:06d}.png", frame)
    print(f"composed {len(textures)} frames into {out}")
    return 0


def _cmd_metrics(args) -> int:
    pred = imgio.load_frame_dir(args.pred)
    gt = imgio.load_frame_dir(args.gt)
    if args.mask:
        masks = [m[:, :, 0] > 0 for m in imgio.load_frame_dir(args.mask)]
    else:
        masks = [np.ones(p.shape[:2], dtype=bool) for p in pred]
    report = evaluate_sequence(pred, gt, masks)
    report.save(args.output)
    means = report.means()
    print(" ".join(f"{k}={v:.4f}" for k, v in sorted(means.items())))
    return 0


def _cmd_synth(args) -> int:
    spec = SceneSpec(frames=args.frames, width=args.size, height=args.size,
                     input_angle_deg=args.angles[0], target_angle_deg=args.angles[1],
                     hidden_arm=not args.no_hidden_arm, occluder=args.occluder,
                     noise=args.noise, texture=args.texture, motion=args.motion,
                     seed=args.seed)
    manifest = make_synthetic(spec, args.output)
    print(f"scene with {manifest['n_faces']} faces written to {args.output}")
    return 0


def _apply_overrides(cfg: JobConfig, args) -> JobConfig:
    fields = {}
    for name in ("mode", "n", "zeta", "output_dir"):
        val = getattr(args, name if name != "output_dir" else "output", None)
        if val is not None:
            fields[name] = val
    return replace(cfg, **fields) if fields else cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(JobConfig.from_json(args.config), args)
    manifest = run_pipeline(cfg, stages=args.stages, threads=args.threads)
    n_artifacts = sum(len(v) for v in manifest["artifacts"].values())
    print(f"pipeline complete: {manifest['frames']} frames, {n_artifacts} artifacts, "
          f"config {manifest['config_hash'][:12]}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = JobConfig.from_json(args.config)
    if args.euclidean_table:
        cfg = replace(cfg, neighbor_table_euclidean=args.euclidean_table)
    if args.output:
        cfg = replace(cfg, output_dir=args.output)
    rows = ablation_report(cfg, args.modes, args.n_values, threads=args.threads)
    print(f"{'mode':>14} {'n':>5} {'M-SSIM':>8} {'M-PSNR':>8}")
    for r in rows:
        print(f"{r['mode']:>14} {r['n']:>5d} {r['masked_ssim']:>8.4f} {r['masked_psnr']:>8.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="meshwarp",
                                 description="geometric texture transfer toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geodesic", help="precompute the face neighbor table")
    p.add_argument("--mesh", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--k", type=int, default=512)
    p.add_argument("--metric", choices=(GEODESIC, EUCLIDEAN), default=GEODESIC)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_geodesic)

    p = sub.add_parser("render", help="rasterize a mesh sequence into one view")
    p.add_argument("--template", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--sequence", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--shade", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("transfer", help="texture-transfer a rendered sequence")
    p.add_argument("--frames", required=True, help="input-view RGB frame dir")
    p.add_argument("--input-fb", required=True, help="input-view face-buffer dir")
    p.add_argument("--target-fb", required=True, help="target-view face-buffer dir")
    p.add_argument("--template", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--sym", default=None)
    p.add_argument("--table", required=True)
    p.add_argument("--mode", choices=MODES, default="I+II+III")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_transfer)

    p = sub.add_parser("flow", help="mesh-derived backward flow between frames")
    p.add_argument("--fb", required=True, help="face-buffer dir of one view")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_flow)

    p = sub.add_parser("compose", help="temporal compose + foreground/background blend")
    p.add_argument("--texture", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--flow", default=None)
    p.add_argument("--zeta", type=float, default=0.1)
    p.add_argument("--background", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_compose)

    p = sub.add_parser("metrics", help="SSIM/PSNR report, masked and unmasked")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("-o", "--out", "--output", dest="output", default="report.json")
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic two-view scene")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=192)
    p.add_argument("--angles", type=float, nargs=2, default=(-45.0, 45.0))
    p.add_argument("--no-hidden-arm", action="store_true")
    p.add_argument("--occluder", action="store_true")
    p.add_argument("--noise", type=int, default=0)
    p.add_argument("--texture", choices=("chart", "pattern"), default="chart")
    p.add_argument("--motion", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("ablate", help="per-(mode, n) masked quality table")
    p.add_argument("--config", required=True)
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--n-values", type=int, nargs="+", default=[50])
    p.add_argument("--euclidean-table", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", nargs="+", choices=STAGES, default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--zeta", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=_cmd_run)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
