"""Full-reference quality metrics and the per-video evaluation report.

Metrics are computed on RGB (H, W, 3) float frames; SSIM is evaluated per
channel and averaged.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from constants import PSNR_INFINITY, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from errors import DimensionError, ParameterError
from image_io import atomic_path

logger = logging.getLogger(__name__)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cannot compare frames of shape {a.shape} and {b.shape}")
    return a, b


def psnr(a, b, data_range=1.0):
    """10 log10(range^2 / MSE) in dB; identical frames give `PSNR_INFINITY`."""
    if not data_range > 0:
        raise ParameterError(f"data_range must be > 0, got {data_range}")
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_INFINITY
    return 10.0 * math.log10(data_range ** 2 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    y, x = np.ogrid[-half:half + 1, -half:half + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return h / h.sum()


def _filter(x, window):
    return convolve2d(x, np.rot90(window, 2), mode="valid")


def _ssim_channel(a, b, window, c1, c2):
    mu1 = _filter(a, window)
    mu2 = _filter(b, window)
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu1_mu2 = mu1 * mu2
    sigma1_sq = _filter(a * a, window) - mu1_sq
    sigma2_sq = _filter(b * b, window) - mu2_sq
    sigma12 = _filter(a * b, window) - mu1_mu2
    ssim_map = ((2 * mu1_mu2 + c1) * (2 * sigma12 + c2)) / ((mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2))
    return float(np.mean(ssim_map))


def ssim(a, b, data_range=1.0):
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    if not data_range > 0:
        raise ParameterError(f"data_range must be > 0, got {data_range}")
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise DimensionError(f"frame {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    window = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    scores = [_ssim_channel(a[..., ch], b[..., ch], window, c1, c2) for ch in range(a.shape[2])]
    return float(np.mean(scores))


@dataclass
class EvalReport:
    psnr: list
    ssim: list

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim))

    def __len__(self):
        return len(self.psnr)


def evaluate_video(pred, gt, data_range=1.0, workers=1):
    """Per-frame PSNR/SSIM; frames may be scored in parallel, results stay in frame order."""
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise DimensionError(f"{len(pred)} predicted frames but {len(gt)} ground-truth frames")
    if not pred:
        raise DimensionError("cannot evaluate an empty video")

    def score(pair):
        a, b = pair
        return psnr(a, b, data_range), ssim(a, b, data_range)

    pairs = list(zip(pred, gt))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, pairs))
    else:
        scores = [score(p) for p in pairs]
    report = EvalReport([s[0] for s in scores], [s[1] for s in scores])
    logger.info("evaluated %d frames: mean PSNR %.4f dB, mean SSIM %.6f",
                len(report), report.mean_psnr, report.mean_ssim)
    return report


def write_report(path, report):
    """CSV rows frame_index, psnr_db, ssim followed by an AGGREGATE row of means."""
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["frame_index", "psnr_db", "ssim"])
            for i, (p, s) in enumerate(zip(report.psnr, report.ssim)):
                writer.writerow([i, repr(p), repr(s)])
            writer.writerow(["AGGREGATE", repr(report.mean_psnr), repr(report.mean_ssim)])
