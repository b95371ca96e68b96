"""Detector backends: model loading, preprocessing, detection and feature
extraction.

Three backends share one handle interface:

- ``TorchScriptHandle`` runs a TorchScript export whose forward returns a
  dict of named tensors (a raw YOLOX-style prediction head under ``output``
  plus one entry per exposed intermediate layer, e.g. ``backbone.dark5``).
- ``OnnxHandle`` does the same for ONNX exports via onnxruntime (optional
  dependency).
- ``StubHandle`` replays golden detection/feature fixtures from disk so the
  whole pipeline is testable without model weights.

All coordinates live in detector input space (the letterboxed frame).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (
    EmptyImage,
    InferenceFailure,
    NonFiniteFeatures,
    UnknownFeatureLayer,
    UnsupportedModelFormat,
)

# Letterbox padding value used by the YOLOX family.
PAD_VALUE = 114
# Class-wise NMS overlap threshold (detector family default).
NMS_IOU_THRESHOLD = 0.45
# Candidate floor applied before NMS. The user-facing confidence threshold is
# applied after NMS so that raising it can only shrink the retained set.
CANDIDATE_FLOOR = 1e-3

DETECTION_OUTPUT = "output"

COCO_CLASSES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag",
    "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon",
    "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
    "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote",
    "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear",
    "hair drier", "toothbrush",
)


@dataclass(frozen=True)
class ModelConfig:
    """Static configuration of a detector backend."""

    model_path: str
    input_width: int = 640
    input_height: int = 640
    confidence_threshold: float = 0.35
    feature_layer: str = "backbone.dark5"
    class_names: tuple[str, ...] = COCO_CLASSES

    def __post_init__(self):
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if self.input_width <= 0 or self.input_height <= 0:
            raise ValueError("input dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "model": Path(self.model_path).name,
            "input_width": self.input_width,
            "input_height": self.input_height,
            "confidence_threshold": self.confidence_threshold,
            "feature_layer": self.feature_layer,
            "num_classes": len(self.class_names),
        }


@dataclass(frozen=True)
class LetterboxTransform:
    """Affine map from original-image pixels to detector input pixels."""

    scale: float
    pad_x: int
    pad_y: int

    def to_input(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale + self.pad_x, y * self.scale + self.pad_y


@dataclass(frozen=True)
class TensorImage:
    """Letterboxed image tensor in detector input space.

    ``data`` is float32, shape (3, H, W), RGB channel order, range [0, 255].
    ``source`` carries the originating file stem when known; the stub backend
    keys its fixtures on it.
    """

    data: np.ndarray
    transform: LetterboxTransform
    source: str | None = None

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def to_hwc(self) -> np.ndarray:
        return np.moveaxis(self.data, 0, -1)


@dataclass(frozen=True)
class Detection:
    """One retained detection, integer inclusive-corner bbox in input space."""

    class_id: int
    confidence: float
    bbox: tuple[int, int, int, int]  # x1, y1, x2, y2 inclusive

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "confidence": self.confidence,
            "bbox": list(self.bbox),
        }


class FeatureMap:
    """W x H x D activation tensor of one intermediate layer.

    Stored as a (H, W, D) float32 array; rejects non-finite values on
    construction.
    """

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError("feature map must be a non-empty (H, W, D) array")
        if not np.isfinite(data).all():
            raise NonFiniteFeatures("feature map contains NaN or Inf values")
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    @property
    def shape_whd(self) -> tuple[int, int, int]:
        return self.width, self.height, self.depth


def preprocess(image: np.ndarray, config: ModelConfig,
               source: str | None = None) -> TensorImage:
    """Letterbox-resize ``image`` (HWC uint8/float, 1/3/4 channels, RGB) to the
    detector input size, padding bottom/right with gray.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise EmptyImage("expected an image with at least one pixel")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    elif image.shape[2] == 4:
        image = image[:, :, :3]
    elif image.shape[2] != 3:
        raise EmptyImage(f"unsupported channel count {image.shape[2]}")

    h, w = image.shape[:2]
    in_w, in_h = config.input_width, config.input_height
    scale = min(in_w / w, in_h / h)
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    resized = cv2.resize(image.astype(np.float32), (new_w, new_h),
                         interpolation=cv2.INTER_LINEAR)
    canvas = np.full((in_h, in_w, 3), float(PAD_VALUE), dtype=np.float32)
    canvas[:new_h, :new_w] = resized
    tensor = np.ascontiguousarray(np.moveaxis(canvas, -1, 0))
    return TensorImage(data=tensor,
                       transform=LetterboxTransform(scale, 0, 0),
                       source=source)


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG/JPEG file into an RGB uint8 HWC array."""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FileNotFoundError(f"cannot decode image: {path}")
    if data.ndim == 2:
        return cv2.cvtColor(data, cv2.COLOR_GRAY2RGB)
    if data.shape[2] == 4:
        return cv2.cvtColor(data, cv2.COLOR_BGRA2RGB)
    return cv2.cvtColor(data, cv2.COLOR_BGR2RGB)


# --------------------------------------------------------------------------- #
# YOLOX-style raw head decode + NMS
# --------------------------------------------------------------------------- #

_KNOWN_STRIDES = ((8, 16, 32), (16, 32), (32,))


def _infer_strides(num_anchors: int, in_w: int, in_h: int) -> tuple[int, ...]:
    for strides in _KNOWN_STRIDES:
        if sum((in_w // s) * (in_h // s) for s in strides) == num_anchors:
            return strides
    raise InferenceFailure(
        f"cannot map {num_anchors} anchors onto a stride grid for "
        f"{in_w}x{in_h} input")


def decode_raw_predictions(raw: np.ndarray, in_w: int, in_h: int
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode a raw (A, 5+C) prediction tensor.

    Channels are [tx, ty, tw, th, objectness, class probs...]; box centers are
    (t_xy + grid) * stride and sizes exp(t_wh) * stride. Returns xyxy boxes,
    combined obj*cls scores and class ids for every anchor.
    """
    raw = np.asarray(raw, dtype=np.float64)
    strides = _infer_strides(raw.shape[0], in_w, in_h)
    grids = []
    stride_col = []
    for s in strides:
        gw, gh = in_w // s, in_h // s
        ys, xs = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        grids.append(np.stack([xs.ravel(), ys.ravel()], axis=1))
        stride_col.append(np.full(gw * gh, s))
    grid = np.concatenate(grids, axis=0).astype(np.float64)
    stride = np.concatenate(stride_col).astype(np.float64)[:, None]

    xy = (raw[:, 0:2] + grid) * stride
    wh = np.exp(raw[:, 2:4]) * stride
    boxes = np.concatenate([xy - wh / 2.0, xy + wh / 2.0], axis=1)
    cls_scores = raw[:, 5:]
    class_ids = np.argmax(cls_scores, axis=1)
    scores = raw[:, 4] * cls_scores[np.arange(raw.shape[0]), class_ids]
    return boxes, scores, class_ids


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float
        ) -> list[int]:
    """Greedy non-maximum suppression; ties broken by lower index."""
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = np.maximum(0.0, x2 - x1) * np.maximum(0.0, y2 - y1)
    keep: list[int] = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(int(idx))
        xx1 = np.maximum(x1[idx], x1)
        yy1 = np.maximum(y1[idx], y1)
        xx2 = np.minimum(x2[idx], x2)
        yy2 = np.minimum(y2[idx], y2)
        inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
        union = areas[idx] + areas - inter
        iou = np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)
        suppressed |= iou > iou_threshold
    return keep


def postprocess(raw: np.ndarray, config: ModelConfig) -> list[Detection]:
    """Raw head tensor -> final detections (floor filter, class-wise NMS,
    confidence filter, clamp+round to integer inclusive corners)."""
    boxes, scores, class_ids = decode_raw_predictions(
        raw, config.input_width, config.input_height)
    mask = scores >= CANDIDATE_FLOOR
    boxes, scores, class_ids = boxes[mask], scores[mask], class_ids[mask]

    detections: list[Detection] = []
    for cls in np.unique(class_ids):
        sel = np.where(class_ids == cls)[0]
        for k in nms(boxes[sel], scores[sel], NMS_IOU_THRESHOLD):
            i = sel[k]
            if scores[i] < config.confidence_threshold:
                continue
            x1 = int(np.clip(round(boxes[i, 0]), 0, config.input_width - 1))
            y1 = int(np.clip(round(boxes[i, 1]), 0, config.input_height - 1))
            x2 = int(np.clip(round(boxes[i, 2]), 0, config.input_width - 1))
            y2 = int(np.clip(round(boxes[i, 3]), 0, config.input_height - 1))
            x2, y2 = max(x1, x2), max(y1, y2)
            detections.append(Detection(int(cls), float(scores[i]),
                                        (x1, y1, x2, y2)))
    detections.sort(key=lambda d: (-d.confidence, d.class_id, d.bbox))
    return detections


# --------------------------------------------------------------------------- #
# Golden fixture IO (stub backend format)
# --------------------------------------------------------------------------- #

_FEATURE_HEADER = struct.Struct("<3I")


def write_feature_fixture(path: str | Path, feat: FeatureMap) -> None:
    """Raw little-endian float32 dump with a (W, H, D) header; data stored
    row-major as (H, W, D)."""
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(feat.width, feat.height, feat.depth))
        fh.write(np.ascontiguousarray(feat.data, dtype="<f4").tobytes())


def read_feature_fixture(path: str | Path) -> FeatureMap:
    blob = Path(path).read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise UnsupportedModelFormat(f"truncated feature fixture: {path}")
    w, h, d = _FEATURE_HEADER.unpack_from(blob)
    payload = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size)
    if payload.size != w * h * d:
        raise UnsupportedModelFormat(f"feature fixture size mismatch: {path}")
    return FeatureMap(payload.reshape(h, w, d))


def write_detection_fixture(path: str | Path,
                            detections: list[Detection]) -> None:
    payload = [d.to_dict() for d in detections]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_detection_fixture(path: str | Path) -> list[Detection]:
    rows = json.loads(Path(path).read_text())
    return [Detection(int(r["class_id"]), float(r["confidence"]),
                      tuple(int(v) for v in r["bbox"])) for r in rows]


# --------------------------------------------------------------------------- #
# Handles
# --------------------------------------------------------------------------- #

class ModelHandle:
    """Common interface: one in-flight inference per handle; returned data is
    immutable."""

    config: ModelConfig
    feature_shape: tuple[int, int, int]  # (W, H, D)

    def detect(self, image: TensorImage) -> list[Detection]:
        raise NotImplementedError

    def extract_features(self, image: TensorImage) -> FeatureMap:
        raise NotImplementedError

    def available_layers(self) -> list[str]:
        raise NotImplementedError


class TorchScriptHandle(ModelHandle):
    """Backend over a torch.jit export returning Dict[str, Tensor]."""

    def __init__(self, config: ModelConfig):
        import torch

        self._torch = torch
        self.config = config
        try:
            self._module = torch.jit.load(str(config.model_path),
                                          map_location="cpu")
        except Exception as exc:  # torch raises RuntimeError on bad files
            raise UnsupportedModelFormat(
                f"cannot load TorchScript model {config.model_path}: {exc}"
            ) from exc
        self._module.eval()
        probe = self._run(np.zeros(
            (3, config.input_height, config.input_width), dtype=np.float32))
        self._layers = sorted(probe.keys())
        if DETECTION_OUTPUT not in probe:
            raise UnsupportedModelFormat(
                f"model exposes no {DETECTION_OUTPUT!r} head; "
                f"outputs: {self._layers}")
        if config.feature_layer not in probe:
            raise UnknownFeatureLayer(config.feature_layer, self._layers)
        fh, fw = probe[config.feature_layer].shape[-2:]
        fd = probe[config.feature_layer].shape[-3]
        self.feature_shape = (fw, fh, fd)

    def _run(self, data: np.ndarray) -> dict[str, np.ndarray]:
        torch = self._torch
        with torch.no_grad():
            tensor = torch.from_numpy(np.ascontiguousarray(data))[None]
            try:
                out = self._module(tensor)
            except Exception as exc:
                raise InferenceFailure(f"TorchScript forward failed: {exc}") from exc
        if not isinstance(out, dict):
            raise InferenceFailure("model output must be a dict of named tensors")
        return {str(k): v.numpy() for k, v in out.items()}

    def available_layers(self) -> list[str]:
        return list(self._layers)

    def detect(self, image: TensorImage) -> list[Detection]:
        out = self._run(image.data)
        return postprocess(out[DETECTION_OUTPUT][0], self.config)

    def extract_features(self, image: TensorImage) -> FeatureMap:
        out = self._run(image.data)
        feat = out[self.config.feature_layer][0]  # (D, H, W)
        return FeatureMap(np.moveaxis(feat, 0, -1))


class OnnxHandle(ModelHandle):
    """Backend over an ONNX export with named intermediate outputs."""

    def __init__(self, config: ModelConfig):
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise UnsupportedModelFormat(
                "loading ONNX models requires onnxruntime; install it or "
                "export the model to TorchScript") from exc
        self.config = config
        try:
            self._session = ort.InferenceSession(
                str(config.model_path), providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise UnsupportedModelFormat(
                f"cannot load ONNX model {config.model_path}: {exc}") from exc
        self._layers = sorted(o.name for o in self._session.get_outputs())
        if DETECTION_OUTPUT not in self._layers:
            raise UnsupportedModelFormat(
                f"model exposes no {DETECTION_OUTPUT!r} head; "
                f"outputs: {self._layers}")
        if config.feature_layer not in self._layers:
            raise UnknownFeatureLayer(config.feature_layer, self._layers)
        self._input_name = self._session.get_inputs()[0].name
        probe = self._run(np.zeros(
            (3, config.input_height, config.input_width), dtype=np.float32))
        fh, fw = probe[config.feature_layer].shape[-2:]
        fd = probe[config.feature_layer].shape[-3]
        self.feature_shape = (fw, fh, fd)

    def _run(self, data: np.ndarray) -> dict[str, np.ndarray]:
        try:
            outs = self._session.run(
                [DETECTION_OUTPUT, self.config.feature_layer],
                {self._input_name: data[None]})
        except Exception as exc:
            raise InferenceFailure(f"onnxruntime run failed: {exc}") from exc
        return {DETECTION_OUTPUT: outs[0], self.config.feature_layer: outs[1]}

    def available_layers(self) -> list[str]:
        return list(self._layers)

    def detect(self, image: TensorImage) -> list[Detection]:
        out = self._run(image.data)
        return postprocess(out[DETECTION_OUTPUT][0], self.config)

    def extract_features(self, image: TensorImage) -> FeatureMap:
        feat = self._run(image.data)[self.config.feature_layer][0]
        return FeatureMap(np.moveaxis(feat, 0, -1))


class StubHandle(ModelHandle):
    """Replays golden fixtures from a directory.

    Per image stem ``<stem>.detections.json`` and ``<stem>.features.bin`` are
    expected; lookups key on ``TensorImage.source``.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self._root = Path(config.model_path)
        if not self._root.is_dir():
            raise UnsupportedModelFormat(
                f"stub backend expects a fixture directory: {self._root}")
        bins = sorted(self._root.glob("*.features.bin"))
        if not bins:
            raise UnsupportedModelFormat(
                f"no *.features.bin fixtures under {self._root}")
        first = read_feature_fixture(bins[0])
        self.feature_shape = first.shape_whd

    def available_layers(self) -> list[str]:
        return [self.config.feature_layer, DETECTION_OUTPUT]

    def _fixture(self, image: TensorImage, kind: str) -> Path:
        """Fixtures key on '<parent>.<stem>' (e.g. ref.000) so ref/ and test/
        images with equal filenames stay distinct; bare '<stem>' is the
        fallback."""
        if image.source is None:
            raise InferenceFailure(
                "stub backend needs TensorImage.source to locate fixtures")
        src = Path(image.source)
        candidates = [f"{src.parent.name}.{src.stem}.{kind}"] \
            if src.parent.name else []
        candidates.append(f"{src.stem}.{kind}")
        for name in candidates:
            path = self._root / name
            if path.exists():
                return path
        raise InferenceFailure(
            f"missing fixture {candidates[0]} under {self._root}")

    def detect(self, image: TensorImage) -> list[Detection]:
        dets = read_detection_fixture(self._fixture(image, "detections.json"))
        return [d for d in dets
                if d.confidence >= self.config.confidence_threshold]

    def extract_features(self, image: TensorImage) -> FeatureMap:
        return read_feature_fixture(self._fixture(image, "features.bin"))


def load_model(config: ModelConfig) -> ModelHandle:
    """Open a detector backend; dispatch on the model path.

    Directories select the stub (golden fixture) backend; ``.onnx`` files the
    onnxruntime backend; ``.pt``/``.ts``/``.torchscript`` files the
    TorchScript backend.
    """
    path = Path(config.model_path)
    if not path.exists():
        raise FileNotFoundError(f"model path does not exist: {path}")
    if path.is_dir():
        return StubHandle(config)
    suffix = path.suffix.lower()
    if suffix == ".onnx":
        return OnnxHandle(config)
    if suffix in (".pt", ".ts", ".torchscript"):
        return TorchScriptHandle(config)
    raise UnsupportedModelFormat(
        f"unrecognized model format {suffix!r} for {path}")
