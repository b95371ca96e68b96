"""Scene-level scoring: the saliency-weighted class mean, structured reports
and the low-quality-object overlay."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as _version
from .backend import (
    Detection,
    ModelHandle,
    TensorImage,
    load_image,
    preprocess,
)
from .baselines import BaselineScores, bbox_patch_scores, whole_image_scores
from .errors import EmptyRecordSet, NoObjectsDetected, PairingMismatch
from .metric import (
    BBOX_MAPPING_RULE,
    COSINE_RULE,
    ClassAggregate,
    ObjectIndexRecord,
    collect_class_indices,
    map_bbox_to_featmap,
    object_index_value,
)
from .saliency import (
    SaliencyConfig,
    SaliencyMap,
    class_saliency,
    compute_saliency,
    load_saliency_file,
    object_saliency,
    uniform_saliency,
)

REPORT_SCHEMA = "osim-report/1"

ZERO_WEIGHT_WARNING = (
    "all class saliency weights are zero; fell back to the unweighted mean")

OVERLAY_ALPHA = 0.4
OVERLAY_COLOR = (255, 0, 0)  # red, RGB


def compute_osim(aggregates: list[ClassAggregate],
                 warnings: list[str] | None = None) -> float:
    """Saliency-weighted average of per-class index values.

    Falls back to the unweighted class mean (with a warning) when the total
    saliency weight vanishes.
    """
    if not aggregates:
        raise EmptyRecordSet("cannot score a scene with no class aggregates")
    if any(agg.s_value < 0 for agg in aggregates):
        raise ValueError("saliency weights must be nonnegative")
    total = sum(agg.s_value for agg in aggregates)
    if total == 0.0:
        if warnings is not None:
            warnings.append(ZERO_WEIGHT_WARNING)
        return float(np.mean([agg.o_value for agg in aggregates]))
    return float(sum(agg.s_value * agg.o_value for agg in aggregates) / total)


@dataclass
class PerObjectEntry:
    record: ObjectIndexRecord
    saliency: float
    confidence: float
    bbox: tuple[int, int, int, int]


@dataclass
class EvaluationReport:
    osim: float
    per_class: list[ClassAggregate]
    per_object: list[PerObjectEntry]
    image_pairs: list[tuple[str, str]]
    config_fingerprint: str
    config: dict
    baselines: dict[str, BaselineScores]
    warnings: list[str] = field(default_factory=list)
    scene: str = ""
    model_name: str = ""
    external_metrics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "tool_version": _version,
            "scene": self.scene,
            "model": self.model_name,
            "fingerprint": self.config_fingerprint,
            "osim": self.osim,
            "per_class": [
                {
                    "class_id": agg.class_id,
                    "o_value": agg.o_value,
                    "s_value": agg.s_value,
                    "count": agg.count,
                }
                for agg in self.per_class
            ],
            "per_object": [
                {
                    "image_index": e.record.image_index,
                    "object_index": e.record.object_index,
                    "class_id": e.record.class_id,
                    "r_value": e.record.r_value,
                    "saliency": e.saliency,
                    "confidence": e.confidence,
                    "bbox": list(e.bbox),
                }
                for e in self.per_object
            ],
            "baselines": {k: v.to_dict() for k, v in self.baselines.items()},
            "image_pairs": [list(pair) for pair in self.image_pairs],
            "external_metrics": dict(sorted(self.external_metrics.items())),
            "config": self.config,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def config_fingerprint(model_config_dict: dict, saliency_dict: dict,
                       saliency_backend: str) -> str:
    """Hash of everything that changes the meaning of a score."""
    payload = {
        "model": model_config_dict,
        "saliency": saliency_dict,
        "saliency_backend": saliency_backend,
        "bbox_mapping": BBOX_MAPPING_RULE,
        "cosine": COSINE_RULE,
        "patch_aggregation": "mean-per-patch",
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _as_array(image, index: int) -> tuple[np.ndarray, str]:
    if isinstance(image, (str, Path)):
        return load_image(image), str(image)
    return np.asarray(image), f"array-{index}"


def _saliency_for(ref_tensor: TensorImage, backend: str,
                  cfg: SaliencyConfig, saliency_dir: str | None
                  ) -> SaliencyMap:
    if backend == "uniform":
        return uniform_saliency(ref_tensor.width, ref_tensor.height)
    if backend == "file":
        if saliency_dir is None:
            raise ValueError("saliency backend 'file' needs saliency_dir")
        stem = Path(ref_tensor.source or "").stem
        return load_saliency_file(Path(saliency_dir) / f"{stem}.png",
                                  ref_tensor.width, ref_tensor.height)
    if backend == "gbvs":
        return compute_saliency(ref_tensor, cfg)
    raise ValueError(f"unknown saliency backend {backend!r}")


def _evaluate_view(index: int, ref, test, model: ModelHandle,
                   saliency_cfg: SaliencyConfig, saliency_backend: str,
                   saliency_dir: str | None):
    """Per-view work unit; returns (records, saliency pairs, entries,
    baseline inputs, warnings)."""
    warnings: list[str] = []
    ref_img, ref_name = _as_array(ref, index)
    test_img, test_name = _as_array(test, index)
    ref_tensor = preprocess(ref_img, model.config, source=ref_name)
    test_tensor = preprocess(test_img, model.config, source=test_name)

    detections = model.detect(ref_tensor)
    view = {
        "pair": (ref_name, test_name),
        "records": [],
        "saliency_pairs": [],
        "entries": [],
        "detections": detections,
        "ref_hwc": np.clip(np.round(ref_tensor.to_hwc()), 0, 255
                           ).astype(np.uint8),
        "test_hwc": np.clip(np.round(test_tensor.to_hwc()), 0, 255
                            ).astype(np.uint8),
        "warnings": warnings,
    }
    if not detections:
        warnings.append(f"view {index}: no detections in the reference image")
        return view

    feat_ref = model.extract_features(ref_tensor)
    feat_test = model.extract_features(test_tensor)
    smap = _saliency_for(ref_tensor, saliency_backend, saliency_cfg,
                         saliency_dir)
    warnings.extend(smap.warnings)

    for j, det in enumerate(detections):
        box = map_bbox_to_featmap(
            det.bbox,
            (model.config.input_width, model.config.input_height),
            (feat_ref.width, feat_ref.height))
        r = object_index_value(feat_ref, feat_test, box)
        s = object_saliency(smap, det.bbox)
        record = ObjectIndexRecord(index, j, det.class_id, r)
        view["records"].append(record)
        view["saliency_pairs"].append((det.class_id, s))
        view["entries"].append(
            PerObjectEntry(record, s, det.confidence, det.bbox))
    return view


def evaluate_scene(ref_images, test_images, model: ModelHandle,
                   saliency_cfg: SaliencyConfig = SaliencyConfig(),
                   saliency_backend: str = "gbvs",
                   saliency_dir: str | None = None,
                   parallelism: int = 1,
                   scene: str = "", model_name: str = "") -> EvaluationReport:
    """Run the full pipeline over positionally paired view lists.

    Views whose reference image yields no detections contribute nothing and
    are listed in warnings; a scene with zero detections overall raises
    NoObjectsDetected.
    """
    if len(ref_images) != len(test_images) or not ref_images:
        raise PairingMismatch(
            f"need equal nonempty view lists, got {len(ref_images)} ref / "
            f"{len(test_images)} test")

    indices = list(range(len(ref_images)))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            views = list(pool.map(
                lambda i: _evaluate_view(i, ref_images[i], test_images[i],
                                         model, saliency_cfg,
                                         saliency_backend, saliency_dir),
                indices))
    else:
        views = [_evaluate_view(i, ref_images[i], test_images[i], model,
                                saliency_cfg, saliency_backend, saliency_dir)
                 for i in indices]

    warnings: list[str] = []
    records: list[ObjectIndexRecord] = []
    saliency_pairs: list[tuple[int, float]] = []
    entries: list[PerObjectEntry] = []
    pairs: list[tuple[str, str]] = []
    for view in views:  # views are already in view order
        warnings.extend(view["warnings"])
        records.extend(view["records"])
        saliency_pairs.extend(view["saliency_pairs"])
        entries.extend(view["entries"])
        pairs.append(view["pair"])

    if not records:
        raise NoObjectsDetected(
            "no detections in any reference view; the scene score is "
            "undefined")

    aggregates = collect_class_indices(records)
    weights = dict(class_saliency(saliency_pairs))
    for agg in aggregates:
        agg.s_value = weights[agg.class_id]
    osim = compute_osim(aggregates, warnings)

    # Baselines: whole-image on the letterboxed frames (identical dims by
    # construction), bbox-patch over the reference detections.
    whole = _mean_baselines(
        [whole_image_scores(v["ref_hwc"], v["test_hwc"]) for v in views],
        "whole-image")
    patch_views = [v for v in views if v["detections"]]
    patch = _mean_baselines(
        [bbox_patch_scores(v["ref_hwc"], v["test_hwc"], v["detections"],
                           warnings) for v in patch_views],
        "bbox-patch")
    patch.patch_count = sum(len(v["detections"]) for v in patch_views)

    fingerprint = config_fingerprint(model.config.to_dict(),
                                     saliency_cfg.to_dict(), saliency_backend)
    return EvaluationReport(
        osim=osim,
        per_class=aggregates,
        per_object=entries,
        image_pairs=pairs,
        config_fingerprint=fingerprint,
        config={
            "model": model.config.to_dict(),
            "saliency": saliency_cfg.to_dict(),
            "saliency_backend": saliency_backend,
            "bbox_mapping": BBOX_MAPPING_RULE,
            "cosine": COSINE_RULE,
        },
        baselines={"whole_image": whole, "bbox_patch": patch},
        warnings=warnings,
        scene=scene,
        model_name=model_name,
    )


def _mean_baselines(scores: list[BaselineScores], scope: str
                    ) -> BaselineScores:
    def mean_of(values):
        values = [v for v in values if v is not None]
        if not values:
            return None
        if any(np.isinf(v) for v in values):
            return float("inf") if all(np.isinf(v) for v in values) else \
                float(np.mean([v for v in values if not np.isinf(v)]))
        return float(np.mean(values))

    return BaselineScores(
        psnr=mean_of([s.psnr for s in scores]) if scores else float("nan"),
        ssim=mean_of([s.ssim for s in scores]) if scores else float("nan"),
        ms_ssim=mean_of([s.ms_ssim for s in scores]) if scores else None,
        scope=scope,
    )


def render_low_quality_overlay(report: EvaluationReport,
                               ref_image: np.ndarray, image_index: int,
                               threshold: float | None = None) -> np.ndarray:
    """Alpha-blend a red mask over every bbox whose class index falls strictly
    below the threshold (default: the scene-level score)."""
    if threshold is None:
        threshold = report.osim
    o_by_class = {agg.class_id: agg.o_value for agg in report.per_class}
    out = np.asarray(ref_image).astype(np.float64).copy()
    color = np.array(OVERLAY_COLOR, dtype=np.float64)
    for entry in report.per_object:
        if entry.record.image_index != image_index:
            continue
        if o_by_class[entry.record.class_id] >= threshold:
            continue
        x1, y1, x2, y2 = entry.bbox
        region = out[y1:y2 + 1, x1:x2 + 1]
        out[y1:y2 + 1, x1:x2 + 1] = (
            (1.0 - OVERLAY_ALPHA) * region + OVERLAY_ALPHA * color)
    return np.clip(np.round(out), 0, 255).astype(np.uint8)
