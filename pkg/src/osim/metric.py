"""Per-object feature-similarity indices and their per-class aggregation.

The per-object index is the mean clamped cosine similarity between reference
and test feature vectors over the feature-map cells covered by the object's
bounding box; per-class values are plain means over all (image, object) pairs
of that class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import FeatureMap
from .errors import EmptyRecordSet, ShapeMismatch

# Mapping-rule identifiers recorded in report fingerprints.
BBOX_MAPPING_RULE = "floor-inclusive"
COSINE_RULE = "clamp[0,1];zero-zero=1;one-zero=0"


@dataclass(frozen=True)
class FeatBox:
    """Inclusive cell-index rectangle on a feature map."""

    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def area(self) -> int:
        return (self.x2 - self.x1 + 1) * (self.y2 - self.y1 + 1)


@dataclass(frozen=True)
class ObjectIndexRecord:
    image_index: int
    object_index: int
    class_id: int
    r_value: float


@dataclass
class ClassAggregate:
    class_id: int
    o_value: float
    count: int
    s_value: float = 0.0


def map_bbox_to_featmap(bbox: tuple[int, int, int, int],
                        input_dims: tuple[int, int],
                        feat_dims: tuple[int, int]) -> FeatBox:
    """Project an input-space bbox onto feature-map cells by resolution ratio.

    Both corners floor; results are clamped to the grid and degenerate boxes
    collapse to a single cell.
    """
    w_img, h_img = input_dims
    w_feat, h_feat = feat_dims
    x1, y1, x2, y2 = bbox
    sx, sy = w_feat / w_img, h_feat / h_img
    x1p = int(np.clip(np.floor(x1 * sx), 0, w_feat - 1))
    y1p = int(np.clip(np.floor(y1 * sy), 0, h_feat - 1))
    x2p = int(np.clip(np.floor(x2 * sx), 0, w_feat - 1))
    y2p = int(np.clip(np.floor(y2 * sy), 0, h_feat - 1))
    return FeatBox(x1p, y1p, max(x1p, x2p), max(y1p, y2p))


def object_index_value(feat_ref: FeatureMap, feat_test: FeatureMap,
                       box: FeatBox) -> float:
    """Mean per-cell cosine similarity inside ``box``, in [0, 1].

    Per-cell cosine is clamped to [0, 1]. Cells where both vectors vanish
    count as 1 (nothing to lose), cells where exactly one vanishes count as 0
    (object content disappeared). Accumulation is double precision.
    """
    if feat_ref.data.shape != feat_test.data.shape:
        raise ShapeMismatch(
            f"feature shapes differ: {feat_ref.data.shape} vs "
            f"{feat_test.data.shape}")
    if not (0 <= box.x1 <= box.x2 < feat_ref.width
            and 0 <= box.y1 <= box.y2 < feat_ref.height):
        raise ShapeMismatch(f"box {box} outside {feat_ref.shape_whd} map")

    a = feat_ref.data[box.y1:box.y2 + 1, box.x1:box.x2 + 1].astype(np.float64)
    b = feat_test.data[box.y1:box.y2 + 1, box.x1:box.x2 + 1].astype(np.float64)
    dots = np.einsum("yxd,yxd->yx", a, b)
    na = np.sqrt(np.einsum("yxd,yxd->yx", a, a))
    nb = np.sqrt(np.einsum("yxd,yxd->yx", b, b))

    both_zero = (na == 0.0) & (nb == 0.0)
    one_zero = (na == 0.0) ^ (nb == 0.0)
    denom = np.where(na * nb > 0.0, na * nb, 1.0)
    cos = np.clip(dots / denom, 0.0, 1.0)
    cos = np.where(both_zero, 1.0, cos)
    cos = np.where(one_zero, 0.0, cos)
    return float(cos.mean())


def collect_class_indices(records: list[ObjectIndexRecord]
                          ) -> list[ClassAggregate]:
    """Group per-object indices by class and average; output sorted by
    class_id so aggregation is order-free."""
    if not records:
        raise EmptyRecordSet("no objects detected in any reference view")
    by_class: dict[int, list[float]] = {}
    for rec in records:
        by_class.setdefault(rec.class_id, []).append(rec.r_value)
    return [
        ClassAggregate(class_id=cid,
                       o_value=float(np.mean(values)),
                       count=len(values))
        for cid, values in sorted(by_class.items())
    ]
