"""Image-quality metrics and the robust reconstruction loss.

PSNR and SSIM follow the classic reference formulations on 8-bit dynamic
range (SSIM: 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03,
channel-mean for color). The masked variants zero out the background in both
images before scoring, isolating foreground fidelity; a flag switches to
cropping the mask's bounding box instead.
"""

from __future__ import annotations

import inspect
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_IDENTICAL = float("inf")


def _as_float(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64)


def psnr(a, b, data_range: float = 255.0, *, mask=None) -> float:
    """Peak signal-to-noise ratio in dB; +inf sentinel for identical images.

    With ``mask`` the squared error is averaged over the masked pixels only,
    so a large clean background cannot dilute foreground error.
    """
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is None:
        mse = np.mean(sq)
    else:
        m = np.asarray(mask) != 0
        if m.shape != a.shape[:2]:
            raise ValueError(f"mask {m.shape} does not match image {a.shape[:2]}")
        if not m.any():
            raise ValueError("mask is empty")
        if a.ndim == 3:
            m = np.broadcast_to(m[:, :, None], a.shape)
        mse = sq[m].mean()
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 20.0 * math.log10(data_range) - 10.0 * math.log10(mse)


def ssim(a, b, *, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, data_range: float = 255.0) -> float:
    """Windowed structural similarity, averaged over valid window centers.

    Color images score each channel independently and report the mean. The
    border of half a window is excluded so every contributing window fits
    entirely inside the image.
    """
    a, b = _as_float(a), _as_float(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return float(np.mean([
            ssim(a[:, :, c], b[:, :, c], window=window, sigma=sigma,
                 k1=k1, k2=k2, data_range=data_range)
            for c in range(a.shape[2])
        ]))

    radius = window // 2
    if min(a.shape) <= 2 * radius:
        raise ValueError(f"image {a.shape} too small for a {window}x{window} window")
    truncate = radius / sigma

    def filt(x):
        return gaussian_filter(x, sigma=sigma, truncate=truncate)

    mu1, mu2 = filt(a), filt(b)
    mu1_mu2 = mu1 * mu2
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    sigma1_sq = filt(a * a) - mu1_sq
    sigma2_sq = filt(b * b) - mu2_sq
    sigma12 = filt(a * b) - mu1_mu2

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2 * mu1_mu2 + c1) * (2 * sigma12 + c2)) / (
        (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    )
    return float(np.mean(ssim_map[radius:-radius, radius:-radius]))


def masked_metric(metric, a, b, mask, *, crop_to_bbox: bool = False, **kwargs) -> float:
    """Evaluate ``metric`` with the background suppressed by the binary mask.

    Both images are zeroed outside the mask before scoring (pre-windowing,
    for windowed metrics). Mask-aware metrics (ones accepting a ``mask``
    keyword, like :func:`psnr`) additionally restrict their averaging to the
    masked pixels. With ``crop_to_bbox`` the zeroed images are cropped to
    the mask's bounding box instead, the other convention found in the
    literature.
    """
    a, b = _as_float(a), _as_float(b)
    mask = np.asarray(mask)
    if mask.shape != a.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {a.shape[:2]}")
    m = (mask != 0)
    mf = m[:, :, None] if a.ndim == 3 else m
    am = a * mf
    bm = b * mf
    if crop_to_bbox:
        ys, xs = np.nonzero(m)
        if not len(ys):
            raise ValueError("mask is empty, nothing to crop to")
        am = am[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
        bm = bm[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
        return metric(am, bm, **kwargs)
    if "mask" in inspect.signature(metric).parameters:
        return metric(am, bm, mask=m, **kwargs)
    return metric(am, bm, **kwargs)


def huber(pred, gt, *, input_scale: float = 1.0) -> float:
    """Mean Huber penalty: quadratic below unit error, linear above.

    The breakpoint sits at |error| = 1, so inputs are expected on a roughly
    unit scale; ``input_scale`` rescales raw differences first (e.g. pass
    1/127.5 for 8-bit images normalized to [-1, 1]). The boundary |e| = 1
    takes the linear branch, whose value 0.5 matches the quadratic limit.
    """
    err = (_as_float(pred) - _as_float(gt)) * input_scale
    abs_err = np.abs(err)
    loss = np.where(abs_err < 1.0, 0.5 * err * err, abs_err - 0.5)
    return float(np.mean(loss))


@dataclass
class MetricReport:
    """Per-frame quality scores plus sequence means."""

    ssim: list[float] = field(default_factory=list)
    masked_ssim: list[float] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    masked_psnr: list[float] = field(default_factory=list)

    def means(self) -> dict[str, float]:
        return {
            name: float(np.mean(vals)) if vals else float("nan")
            for name, vals in [("ssim", self.ssim), ("masked_ssim", self.masked_ssim),
                               ("psnr", self.psnr), ("masked_psnr", self.masked_psnr)]
        }

    def to_json(self) -> dict:
        return {
            "frames": [
                {"ssim": s, "masked_ssim": ms, "psnr": p, "masked_psnr": mp}
                for s, ms, p, mp in zip(self.ssim, self.masked_ssim, self.psnr, self.masked_psnr)
            ],
            "mean": self.means(),
        }

    def save(self, path) -> None:
        # note: +inf sentinels serialize as bare Infinity tokens
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_sequence(pred_frames, gt_frames, masks) -> MetricReport:
    """Score a predicted sequence against ground truth, masked and unmasked."""
    if len(pred_frames) != len(gt_frames) or len(pred_frames) != len(masks):
        raise ValueError("prediction, ground truth and mask sequences differ in length")
    report = MetricReport()
    for pred, gt, mask in zip(pred_frames, gt_frames, masks):
        report.ssim.append(ssim(pred, gt))
        report.psnr.append(psnr(pred, gt))
        report.masked_ssim.append(masked_metric(ssim, pred, gt, mask))
        report.masked_psnr.append(masked_metric(psnr, pred, gt, mask))
    return report
