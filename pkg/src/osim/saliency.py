"""Graph-based visual saliency and the per-object / per-class saliency
weights.

The saliency estimator follows the classic graph-based recipe: per feature
channel, cells of a coarse grid become states of a Markov chain whose
transition weights combine feature dissimilarity with spatial proximity; the
chain's equilibrium is the activation map, a second pass over the activation
map concentrates mass, channels are summed, upsampled and max-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .backend import TensorImage
from .errors import BoxOutOfBounds, EmptyRecordSet

# Below this total dissimilarity mass a channel is considered blank.
_BLANK_MASS = 1e-12

UNIFORM_FALLBACK_WARNING = "saliency: blank image, uniform fallback active"


@dataclass(frozen=True)
class SaliencyConfig:
    channels: tuple[str, ...] = ("intensity", "color", "orientation")
    orientations: tuple[float, ...] = (0.0, 45.0, 90.0, 135.0)
    graph_sigma: float = 5.0
    power_iterations: int = 200
    tolerance: float = 1e-6
    map_resolution: int = 32

    def __post_init__(self):
        if self.power_iterations < 1:
            raise ValueError("power_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.map_resolution < 8:
            raise ValueError("map_resolution must be >= 8")

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "orientations": list(self.orientations),
            "graph_sigma": self.graph_sigma,
            "power_iterations": self.power_iterations,
            "tolerance": self.tolerance,
            "map_resolution": self.map_resolution,
        }


@dataclass
class SaliencyMap:
    """Per-pixel attention weights in [0, 1], max-normalized."""

    values: np.ndarray  # (H, W) float64
    warnings: list[str] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def build_transition_matrix(grid: np.ndarray, sigma: float) -> np.ndarray:
    """Row-stochastic transition matrix over grid cells.

    Edge weight (a -> b) is |grid[a] - grid[b]| * exp(-dist(a,b)^2 / (2
    sigma^2)); rows with zero mass become uniform.
    """
    h, w = grid.shape
    flat = grid.reshape(-1).astype(np.float64)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ys, xs = ys.reshape(-1), xs.reshape(-1)
    d2 = (xs[:, None] - xs[None, :]) ** 2 + (ys[:, None] - ys[None, :]) ** 2
    weights = np.abs(flat[:, None] - flat[None, :]) * np.exp(
        -d2 / (2.0 * sigma * sigma))
    row_sums = weights.sum(axis=1, keepdims=True)
    n = h * w
    uniform = np.full(n, 1.0 / n)
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(row_sums > 0.0, weights / row_sums, uniform)
    return matrix


def build_concentration_matrix(activation: np.ndarray,
                               sigma: float) -> np.ndarray:
    """Mass-concentration chain for the normalization pass: edge weight
    (a -> b) is activation[b] * exp(-dist(a,b)^2 / (2 sigma^2)), so
    equilibrium mass flows into high-activation cells instead of onto
    activation boundaries."""
    h, w = activation.shape
    flat = activation.reshape(-1).astype(np.float64)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ys, xs = ys.reshape(-1), xs.reshape(-1)
    d2 = (xs[:, None] - xs[None, :]) ** 2 + (ys[:, None] - ys[None, :]) ** 2
    weights = flat[None, :] * np.exp(-d2 / (2.0 * sigma * sigma))
    row_sums = weights.sum(axis=1, keepdims=True)
    n = h * w
    uniform = np.full(n, 1.0 / n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(row_sums > 0.0, weights / row_sums, uniform)


def stationary_distribution(matrix: np.ndarray, tolerance: float,
                            max_iterations: int,
                            sum_log: list[float] | None = None
                            ) -> tuple[np.ndarray, bool]:
    """Power-iterate v <- v P from the uniform start.

    Returns (distribution, converged). When ``sum_log`` is given, the total
    probability mass after each iteration is appended to it.
    """
    n = matrix.shape[0]
    v = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iterations):
        nxt = v @ matrix
        if sum_log is not None:
            sum_log.append(float(nxt.sum()))
        delta = float(np.abs(nxt - v).sum())
        v = nxt
        if delta < tolerance:
            converged = True
            break
    return v, converged


def _channel_maps(image_hwc: np.ndarray, cfg: SaliencyConfig
                  ) -> list[list[np.ndarray]]:
    """Raw feature channels grouped per modality, values >= 0.

    Groups are combined as conspicuity maps: maps inside a group are
    averaged, groups are summed, so the four orientation maps together carry
    the same weight as the single intensity map.
    """
    img = image_hwc.astype(np.float64) / 255.0
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    intensity = (r + g + b) / 3.0
    groups: list[list[np.ndarray]] = []
    if "intensity" in cfg.channels:
        groups.append([intensity])
    if "color" in cfg.channels:
        groups.append([np.abs(r - g), np.abs(b - (r + g) / 2.0)])
    if "orientation" in cfg.channels:
        gray = intensity.astype(np.float32)
        orient = []
        for theta_deg in cfg.orientations:
            kernel = cv2.getGaborKernel(
                (9, 9), sigma=2.0, theta=np.deg2rad(theta_deg),
                lambd=5.0, gamma=1.0, psi=0.0)
            kernel -= kernel.mean()
            resp = cv2.filter2D(gray, cv2.CV_64F, kernel)
            orient.append(np.abs(resp))
        groups.append(orient)
    return groups


def compute_saliency(image: TensorImage | np.ndarray,
                     cfg: SaliencyConfig = SaliencyConfig()) -> SaliencyMap:
    """Saliency of a detector-input-space image."""
    hwc = image.to_hwc() if isinstance(image, TensorImage) else np.asarray(image)
    height, width = hwc.shape[:2]
    res = cfg.map_resolution
    warnings: list[str] = []
    total = np.zeros((res, res), dtype=np.float64)
    active_groups = 0
    capped = False

    for group in _channel_maps(hwc, cfg):
        group_sum = np.zeros((res, res), dtype=np.float64)
        active = 0
        for channel in group:
            grid = cv2.resize(channel, (res, res),
                              interpolation=cv2.INTER_AREA)
            mass = np.abs(grid.reshape(-1)[:, None]
                          - grid.reshape(-1)[None, :]).mean()
            if mass < _BLANK_MASS:
                continue
            matrix = build_transition_matrix(grid, cfg.graph_sigma)
            activation, ok1 = stationary_distribution(
                matrix, cfg.tolerance, cfg.power_iterations)
            # concentration pass on the activation map itself
            matrix2 = build_concentration_matrix(
                activation.reshape(res, res), cfg.graph_sigma)
            concentrated, ok2 = stationary_distribution(
                matrix2, cfg.tolerance, cfg.power_iterations)
            capped = capped or not (ok1 and ok2)
            group_sum += concentrated.reshape(res, res)
            active += 1
        if active:
            total += group_sum / active
            active_groups += 1

    if active_groups:
        # final concentration pass on the combined map: pulls the peak into
        # regions whose whole neighborhood is active rather than onto
        # isolated ridges
        final, ok = stationary_distribution(
            build_concentration_matrix(total, cfg.graph_sigma),
            cfg.tolerance, cfg.power_iterations)
        capped = capped or not ok
        total = final.reshape(res, res)
    if capped:
        warnings.append("saliency: power iteration hit the iteration cap")
    if active_groups == 0:
        warnings.append(UNIFORM_FALLBACK_WARNING)
        return SaliencyMap(np.ones((height, width)), warnings)

    upsampled = cv2.resize(total, (width, height),
                           interpolation=cv2.INTER_LINEAR)
    # smooth by one grid cell: the discrete peak of a coarse basin can sit on
    # a cell straddling an object boundary; blurring recenters it
    cell = max(width, height) / res
    upsampled = cv2.GaussianBlur(upsampled, (0, 0), sigmaX=cell, sigmaY=cell)
    upsampled = np.maximum(upsampled, 0.0)
    peak = upsampled.max()
    if peak < _BLANK_MASS:
        warnings.append(UNIFORM_FALLBACK_WARNING)
        return SaliencyMap(np.ones((height, width)), warnings)
    return SaliencyMap(upsampled / peak, warnings)


def uniform_saliency(width: int, height: int) -> SaliencyMap:
    """All-ones map; turns the scene score into an unweighted class mean."""
    if width < 1 or height < 1:
        raise ValueError("dimensions must be positive")
    return SaliencyMap(np.ones((height, width)))


def load_saliency_file(path: str | Path, width: int, height: int
                       ) -> SaliencyMap:
    """External grayscale PNG, resized to the target frame, max-normalized."""
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise FileNotFoundError(f"cannot decode saliency map: {path}")
    values = cv2.resize(raw.astype(np.float64), (width, height),
                        interpolation=cv2.INTER_LINEAR)
    peak = values.max()
    if peak <= 0:
        return SaliencyMap(np.ones((height, width)),
                           [UNIFORM_FALLBACK_WARNING])
    return SaliencyMap(values / peak)


def object_saliency(saliency: SaliencyMap,
                    bbox: tuple[int, int, int, int]) -> float:
    """Mean saliency over an inclusive pixel bbox."""
    x1, y1, x2, y2 = bbox
    if not (0 <= x1 <= x2 < saliency.width
            and 0 <= y1 <= y2 < saliency.height):
        raise BoxOutOfBounds(
            f"bbox {bbox} outside {saliency.width}x{saliency.height} map")
    return float(saliency.values[y1:y2 + 1, x1:x2 + 1].mean())


def class_saliency(per_object: list[tuple[int, float]]
                   ) -> list[tuple[int, float]]:
    """Average per-object saliency within each class; sorted by class id."""
    if not per_object:
        raise EmptyRecordSet("no per-object saliency values")
    by_class: dict[int, list[float]] = {}
    for class_id, value in per_object:
        by_class.setdefault(class_id, []).append(value)
    return [(cid, float(np.mean(vals)))
            for cid, vals in sorted(by_class.items())]
