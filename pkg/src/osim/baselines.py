"""Whole-image and bbox-patch baseline metrics (PSNR, SSIM, MS-SSIM).

Images are accepted as uint8 or float arrays, HW or HWC; internally pixels
are normalized to [0, 1] and color scores are channel means.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .backend import Detection
from .errors import DimensionMismatch, NoObjectsDetected, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Standard five-scale weights for the multi-scale variant.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class BaselineScores:
    psnr: float  # dB, +inf for identical inputs
    ssim: float
    ms_ssim: float | None
    scope: str  # "whole-image" | "bbox-patch"
    patch_count: int | None = None

    def to_dict(self) -> dict:
        return {
            "psnr": "inf" if np.isinf(self.psnr) else self.psnr,
            "ssim": self.ssim,
            "ms_ssim": self.ms_ssim,
            "scope": self.scope,
            "patch_count": self.patch_count,
        }


def _normalize(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    return image.astype(np.float64)


def _check_dims(ref: np.ndarray, test: np.ndarray) -> None:
    if ref.shape != test.shape:
        raise DimensionMismatch(f"shapes differ: {ref.shape} vs {test.shape}")


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """10 log10(1 / MSE) on [0, 1] pixels; +inf when MSE is zero."""
    _check_dims(np.asarray(ref), np.asarray(test))
    a, b = _normalize(ref), _normalize(test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = SSIM_WINDOW,
                     sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _conv_valid(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    half = window.shape[0] // 2
    out = cv2.filter2D(image, -1, window, borderType=cv2.BORDER_CONSTANT)
    return out[half:-half, half:-half]


def _ssim_components(a: np.ndarray, b: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Per-window luminance and contrast-structure terms (valid windows)."""
    window = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _conv_valid(a, window)
    mu_b = _conv_valid(b, window)
    aa = _conv_valid(a * a, window) - mu_a ** 2
    bb = _conv_valid(b * b, window) - mu_b ** 2
    ab = _conv_valid(a * b, window) - mu_a * mu_b
    luminance = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    contrast_structure = (2 * ab + c2) / (aa + bb + c2)
    return luminance, contrast_structure


def _as_planes(image: np.ndarray) -> list[np.ndarray]:
    if image.ndim == 2:
        return [image]
    return [image[..., c] for c in range(image.shape[2])]


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Mean local SSIM, 11-pixel Gaussian window, standard constants."""
    _check_dims(np.asarray(ref), np.asarray(test))
    a, b = _normalize(ref), _normalize(test)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise TooSmall(
            f"images must be at least {SSIM_WINDOW} pixels on each side")
    scores = []
    for pa, pb in zip(_as_planes(a), _as_planes(b)):
        lum, cs = _ssim_components(pa, pb)
        scores.append(float(np.mean(lum * cs)))
    return float(np.mean(scores))


def ms_ssim(ref: np.ndarray, test: np.ndarray,
            weights: tuple[float, ...] = MS_SSIM_WEIGHTS) -> float:
    """Multi-scale SSIM: contrast-structure at every scale, luminance at the
    coarsest; scales are 2x average-pooled."""
    _check_dims(np.asarray(ref), np.asarray(test))
    a, b = _normalize(ref), _normalize(test)
    min_side = min(a.shape[0], a.shape[1])
    if min_side < SSIM_WINDOW * (2 ** (len(weights) - 1)):
        raise TooSmall(
            f"need at least {SSIM_WINDOW * 2 ** (len(weights) - 1)} pixels "
            "per side for the full scale pyramid")
    per_channel = []
    for pa, pb in zip(_as_planes(a), _as_planes(b)):
        value = 1.0
        for level, weight in enumerate(weights):
            lum, cs = _ssim_components(pa, pb)
            if level == len(weights) - 1:
                value *= float(np.mean(lum * cs)) ** weight
            else:
                value *= max(float(np.mean(cs)), 0.0) ** weight
                pa = cv2.blur(pa, (2, 2))[::2, ::2]
                pb = cv2.blur(pb, (2, 2))[::2, ::2]
        per_channel.append(value)
    return float(np.mean(per_channel))


def _crop(image: np.ndarray, bbox: tuple[int, int, int, int]) -> np.ndarray:
    x1, y1, x2, y2 = bbox
    return image[y1:y2 + 1, x1:x2 + 1]


def patch_metric(ref: np.ndarray, test: np.ndarray,
                 detections: list[Detection], metric: str,
                 warnings: list[str] | None = None) -> float:
    """bbox-patch protocol: crop each detection from both images, score the
    crops, average over detections.

    Patches smaller than the SSIM window are bilinearly upscaled to the
    window minimum so tiny objects still contribute. Infinite PSNR patches
    are excluded from the mean (with a warning) unless every patch is
    infinite, in which case the result is +inf.
    """
    if metric not in ("psnr", "ssim"):
        raise ValueError(f"unsupported patch metric {metric!r}")
    if not detections:
        raise NoObjectsDetected("patch metric needs at least one detection")
    _check_dims(np.asarray(ref), np.asarray(test))

    scores = []
    dropped = 0
    for det in detections:
        pa = _crop(np.asarray(ref), det.bbox)
        pb = _crop(np.asarray(test), det.bbox)
        if metric == "ssim" and min(pa.shape[0], pa.shape[1]) < SSIM_WINDOW:
            size = (max(pa.shape[1], SSIM_WINDOW), max(pa.shape[0], SSIM_WINDOW))
            pa = cv2.resize(_normalize(pa), size, interpolation=cv2.INTER_LINEAR)
            pb = cv2.resize(_normalize(pb), size, interpolation=cv2.INTER_LINEAR)
        value = psnr(pa, pb) if metric == "psnr" else ssim(pa, pb)
        if metric == "psnr" and np.isinf(value):
            dropped += 1
            continue
        scores.append(value)
    if dropped and warnings is not None:
        warnings.append(
            f"patch psnr: excluded {dropped} identical patch(es) with "
            "infinite score")
    if not scores:
        return float("inf")
    return float(np.mean(scores))


def whole_image_scores(ref: np.ndarray, test: np.ndarray) -> BaselineScores:
    try:
        ms = ms_ssim(ref, test)
    except TooSmall:
        ms = None
    return BaselineScores(psnr=psnr(ref, test), ssim=ssim(ref, test),
                          ms_ssim=ms, scope="whole-image")


def bbox_patch_scores(ref: np.ndarray, test: np.ndarray,
                      detections: list[Detection],
                      warnings: list[str] | None = None) -> BaselineScores:
    return BaselineScores(
        psnr=patch_metric(ref, test, detections, "psnr", warnings),
        ssim=patch_metric(ref, test, detections, "ssim", warnings),
        ms_ssim=None,
        scope="bbox-patch",
        patch_count=len(detections),
    )
