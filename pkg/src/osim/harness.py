"""Experiment orchestration helpers: dataset splits, pose grids, the
per-object blur study, cross-metric normalization and correlation statistics.
"""

from __future__ import annotations

import csv
import warnings as _warnings
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .backend import Detection
from .errors import (
    ConstantSeries,
    DegenerateAnchors,
    LengthMismatch,
    MalformedRow,
    OutOfRangeMOS,
    StepOutOfRange,
    UnknownColumn,
)


@dataclass(frozen=True)
class SplitSpec:
    n: int = 8  # every n-th image goes to the test split
    seed: int = 0  # reserved for randomized splits

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("stride must be >= 2")


def split_dataset(image_list: list, spec: SplitSpec
                  ) -> tuple[list, list]:
    """Test split = indices {0, n, 2n, ...}; train = the complement."""
    if not image_list:
        raise ValueError("cannot split an empty list")
    test = [img for i, img in enumerate(image_list) if i % spec.n == 0]
    train = [img for i, img in enumerate(image_list) if i % spec.n != 0]
    if not train:
        _warnings.warn("train split is empty", stacklevel=2)
    return train, test


@dataclass(frozen=True)
class PoseGrid:
    tau: float = 15.0
    elevation_range: tuple[float, float] = (-90.0, 90.0)
    azimuth_range: tuple[float, float] = (0.0, 360.0)
    dedupe_poles: bool = True

    def __post_init__(self):
        if self.tau <= 0 or 360.0 % self.tau != 0:
            raise ValueError("tau must divide 360")


def pose_grid(grid: PoseGrid) -> list[tuple[float, float]]:
    """Cartesian (elevation, azimuth) grid at tau-degree steps; at the poles
    all azimuths coincide, so dedupe emits a single pose each."""
    lo, hi = grid.elevation_range
    elevations = np.arange(lo, hi + grid.tau / 2, grid.tau)
    azimuths = np.arange(grid.azimuth_range[0], grid.azimuth_range[1],
                         grid.tau)
    poses: list[tuple[float, float]] = []
    for elev in elevations:
        if grid.dedupe_poles and abs(elev) == 90.0:
            poses.append((float(elev), 0.0))
            continue
        for azim in azimuths:
            poses.append((float(elev), float(azim)))
    return poses


@dataclass
class DegradationPlan:
    """Cumulative blur order over a view's detections, small to large."""

    order: list[Detection]
    blur_sigma: float
    steps: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.blur_sigma <= 0:
            raise ValueError("blur sigma must be positive")
        if not self.steps:
            # 0 .. all objects, then the full-image anchor
            self.steps = list(range(len(self.order) + 2))
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("steps must be strictly increasing")


def make_degradation_plan(detections: list[Detection],
                          blur_sigma: float) -> DegradationPlan:
    """Order objects by bbox pixel area ascending, ties by (x1, y1)."""
    def key(d: Detection):
        x1, y1, x2, y2 = d.bbox
        return ((x2 - x1 + 1) * (y2 - y1 + 1), x1, y1)

    return DegradationPlan(order=sorted(detections, key=key),
                           blur_sigma=blur_sigma)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with kernel radius 3 sigma, reflect-101 borders,
    computed in float64."""
    radius = int(np.ceil(3.0 * sigma))
    ksize = 2 * radius + 1
    return cv2.GaussianBlur(np.asarray(image, dtype=np.float64),
                            (ksize, ksize), sigmaX=sigma, sigmaY=sigma,
                            borderType=cv2.BORDER_REFLECT_101)


def apply_object_blur(image: np.ndarray, detections: list[Detection],
                      plan: DegradationPlan, step: int) -> np.ndarray:
    """Blur inside the bboxes of the first ``step`` objects of the plan.

    Always starts from the original, so reaching step k directly or via
    earlier steps is bit-identical. ``step == len(order) + 1`` blurs the
    whole image (the normalization anchor).
    """
    n = len(plan.order)
    if step < 0 or step > n + 1:
        raise StepOutOfRange(f"step {step} outside [0, {n + 1}]")
    original = np.asarray(image)
    if step == 0:
        return original.copy()
    blurred = gaussian_blur(original, plan.blur_sigma)
    if original.dtype == np.uint8:
        blurred = np.clip(np.round(blurred), 0, 255).astype(np.uint8)
    else:
        blurred = blurred.astype(original.dtype)
    if step == n + 1:
        return blurred
    out = original.copy()
    for det in plan.order[:step]:
        x1, y1, x2, y2 = det.bbox
        out[y1:y2 + 1, x1:x2 + 1] = blurred[y1:y2 + 1, x1:x2 + 1]
    return out


@dataclass
class MetricSeries:
    metric: str
    raw: list[float]
    normalized: list[float] = field(default_factory=list)


def normalize_series(raw: list[float], best: float, full_degraded: float,
                     higher_is_better: bool = True) -> list[float]:
    """Scale between the best score (-> 1) and the fully degraded score
    (-> 0). Lower-is-better series must be flipped (1 - v) upstream."""
    if best == full_degraded:
        raise DegenerateAnchors("best and fully-degraded anchors coincide")
    if not higher_is_better:
        raw = [1.0 - v for v in raw]
        best, full_degraded = 1.0 - best, 1.0 - full_degraded
    span = best - full_degraded
    return [float((v - full_degraded) / span) for v in raw]


# Per-column leaderboard rules: how heterogeneous metric ranges map to [0, 1]
# for joint plotting.
LEADERBOARD_RULES: dict[str, str] = {
    "psnr": "div-max",
    "ssim": "identity",
    "lpips": "one-minus",
    "clip_sim": "identity",
    "fid": "one-minus-div-max",
    "cd": "one-minus",
    "mos": "mos",
    "osim": "identity",
    "ms_ssim": "identity",
    "f_score": "identity",
    "v_iou": "identity",
}

# Columns where smaller raw values mean better quality (sign-flipped before
# correlation).
LOWER_IS_BETTER = {"lpips", "fid", "cd"}


def normalize_for_leaderboard(column: str, values: list[float]
                              ) -> list[float]:
    rule = LEADERBOARD_RULES.get(column)
    if rule is None:
        raise UnknownColumn(f"no leaderboard rule for column {column!r}")
    arr = np.asarray(values, dtype=np.float64)
    if rule == "identity":
        out = arr
    elif rule == "div-max":
        out = arr / arr.max()
    elif rule == "one-minus":
        out = 1.0 - arr
    elif rule == "one-minus-div-max":
        out = 1.0 - arr / arr.max()
    elif rule == "mos":
        out = (arr - 1.0) / 4.0
    else:  # pragma: no cover
        raise UnknownColumn(rule)
    return [float(v) for v in out]


# --------------------------------------------------------------------------- #
# Correlation statistics
# --------------------------------------------------------------------------- #

def _check_pair(x, y, minimum: int = 3):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"need equal-length vectors, got {x.shape} "
                             f"and {y.shape}")
    if x.size < minimum:
        raise LengthMismatch(f"need at least {minimum} samples")
    return x, y


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x, y = _check_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt((dx ** 2).sum())
    sy = np.sqrt((dy ** 2).sum())
    if sx == 0.0 or sy == 0.0:
        raise ConstantSeries("correlation undefined for a constant series")
    return float((dx * dy).sum() / (sx * sy))


def midranks(x) -> np.ndarray:
    """1-based mid-ranks; ties get the average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson of mid-ranks."""
    x, y = _check_pair(x, y)
    return pearson(midranks(x), midranks(y))


# --------------------------------------------------------------------------- #
# MOS ingestion
# --------------------------------------------------------------------------- #

def ingest_mos(csv_path: str | Path,
               warnings: list[str] | None = None
               ) -> dict[tuple[str, str], float]:
    """Parse a ``scene,model,mos`` CSV into a lookup table.

    Scores must lie on the five-point scale [1, 5]; duplicate keys are
    averaged with a warning.
    """
    groups: dict[tuple[str, str], list[float]] = {}
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                [f.strip() for f in reader.fieldnames[:3]] != ["scene", "model", "mos"]:
            raise MalformedRow(
                f"expected header scene,model,mos in {csv_path}")
        for lineno, row in enumerate(reader, start=2):
            try:
                scene = row["scene"].strip()
                model = row["model"].strip()
                mos = float(row["mos"])
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise MalformedRow(
                    f"{csv_path}:{lineno}: cannot parse row {row!r}") from exc
            if not scene or not model:
                raise MalformedRow(f"{csv_path}:{lineno}: empty key field")
            if not (1.0 <= mos <= 5.0):
                raise OutOfRangeMOS(
                    f"{csv_path}:{lineno}: mos {mos} outside [1, 5]")
            groups.setdefault((scene, model), []).append(mos)

    table: dict[tuple[str, str], float] = {}
    for key, values in groups.items():
        if len(values) > 1 and warnings is not None:
            warnings.append(
                f"mos: {len(values)} rows for {key}; averaged")
        table[key] = float(np.mean(values))
    return table
