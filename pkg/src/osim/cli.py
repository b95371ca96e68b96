"""Command-line entry point: scene evaluation, degradation studies and
MOS correlation tables.

Exit codes are a stable contract: 0 success, 1 config/IO error, 2 metric
undefined (no objects detected).

Option resolution order: built-in defaults < config file < OSIM_* environment
variables < command-line flags.
"""

from __future__ import annotations

import argparse
import glob as globmod
import json
import os
import sys
import tempfile
from pathlib import Path

import cv2
import numpy as np

from .backend import COCO_CLASSES, ModelConfig, load_image, load_model, preprocess
from .baselines import psnr as psnr_metric
from .baselines import ssim as ssim_metric
from .errors import NoObjectsDetected, OsimError
from .harness import (
    LOWER_IS_BETTER,
    apply_object_blur,
    ingest_mos,
    make_degradation_plan,
    normalize_series,
    pearson,
    spearman,
)
from .saliency import SaliencyConfig
from .scoring import evaluate_scene, render_low_quality_overlay

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNDEFINED = 2

_ENV_PREFIX = "OSIM_"


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_png(path: Path, image_rgb: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    ok, buf = cv2.imencode(".png", cv2.cvtColor(image_rgb, cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"cannot encode {path}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _scene_pairs(scene_dir: Path) -> tuple[list[Path], list[Path]]:
    """Scene layout: <scene>/ref/<idx>.png and <scene>/test/<idx>.png,
    positionally paired by sorted filename."""
    refs = sorted((scene_dir / "ref").glob("*"))
    tests = sorted((scene_dir / "test").glob("*"))
    refs = [p for p in refs if p.suffix.lower() in (".png", ".jpg", ".jpeg")]
    tests = [p for p in tests if p.suffix.lower() in (".png", ".jpg", ".jpeg")]
    if not refs or len(refs) != len(tests):
        raise OSError(
            f"scene {scene_dir} needs matching ref/ and test/ image lists "
            f"(found {len(refs)} ref, {len(tests)} test)")
    return refs, tests


def _load_file_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    return data


def _resolve(args: argparse.Namespace, key: str, default=None):
    """defaults < config file < environment < explicit flag."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    env = os.environ.get(_ENV_PREFIX + key.upper())
    if env is not None:
        return env
    cfg = getattr(args, "_file_config", {})
    if key in cfg:
        return cfg[key]
    return default


def _build_model_config(args: argparse.Namespace) -> ModelConfig:
    model = _resolve(args, "model")
    if not model:
        raise ValueError("--model is required (flag, config file or "
                         "OSIM_MODEL)")
    classes: tuple[str, ...] = COCO_CLASSES
    classes_file = _resolve(args, "classes")
    if classes_file:
        classes = tuple(
            line.strip() for line in Path(classes_file).read_text().splitlines()
            if line.strip())
    return ModelConfig(
        model_path=str(model),
        input_width=int(_resolve(args, "input_width", 640)),
        input_height=int(_resolve(args, "input_height", 640)),
        confidence_threshold=float(_resolve(args, "conf", 0.35)),
        feature_layer=str(_resolve(args, "layer", "backbone.dark5")),
        class_names=classes,
    )


def _build_saliency_config(args: argparse.Namespace) -> SaliencyConfig:
    return SaliencyConfig(
        graph_sigma=float(_resolve(args, "graph_sigma", 5.0)),
        power_iterations=int(_resolve(args, "power_iterations", 200)),
        tolerance=float(_resolve(args, "tolerance", 1e-6)),
        map_resolution=int(_resolve(args, "map_resolution", 32)),
    )


def _parse_external(pairs: list[str] | None) -> dict[str, float]:
    out: dict[str, float] = {}
    for pair in pairs or []:
        name, _, value = pair.partition("=")
        if not name or not value:
            raise ValueError(f"--external expects name=value, got {pair!r}")
        out[name] = float(value)
    return out


# --------------------------------------------------------------------------- #
# evaluate
# --------------------------------------------------------------------------- #

def cmd_evaluate(args: argparse.Namespace) -> int:
    model_cfg = _build_model_config(args)
    saliency_cfg = _build_saliency_config(args)
    saliency_backend = str(_resolve(args, "saliency", "gbvs"))
    out_dir = Path(_resolve(args, "out", "."))
    model = load_model(model_cfg)
    model_name = _resolve(args, "model_name") or Path(model_cfg.model_path).stem
    external = _parse_external(args.external)

    status = EXIT_OK
    for scene_dir in [Path(s) for s in args.scene]:
        refs, tests = _scene_pairs(scene_dir)
        try:
            report = evaluate_scene(
                refs, tests, model,
                saliency_cfg=saliency_cfg,
                saliency_backend=saliency_backend,
                saliency_dir=_resolve(args, "saliency_dir"),
                parallelism=int(_resolve(args, "parallelism", 1)),
                scene=scene_dir.name,
                model_name=str(model_name),
            )
        except NoObjectsDetected as exc:
            print(f"{scene_dir.name}: {exc}", file=sys.stderr)
            status = EXIT_UNDEFINED
            continue
        report.external_metrics = external
        report_path = out_dir / f"{scene_dir.name}.json"
        _atomic_write_text(report_path, report.to_json())
        if args.overlay:
            for i, ref in enumerate(refs):
                tensor = preprocess(load_image(ref), model_cfg,
                                    source=str(ref))
                overlay = render_low_quality_overlay(
                    report, tensor.to_hwc().astype(np.uint8), i)
                _atomic_write_png(
                    out_dir / f"{scene_dir.name}.overlay.{i:03d}.png",
                    overlay)
        print(f"{scene_dir.name}: osim={report.osim:.6f} -> {report_path}")
        for warning in report.warnings:
            print(f"  warning: {warning}", file=sys.stderr)
    return status


# --------------------------------------------------------------------------- #
# degrade
# --------------------------------------------------------------------------- #

def cmd_degrade(args: argparse.Namespace) -> int:
    model_cfg = _build_model_config(args)
    saliency_cfg = _build_saliency_config(args)
    saliency_backend = str(_resolve(args, "saliency", "gbvs"))
    sigma = float(_resolve(args, "sigma", 5.0))
    out_dir = Path(_resolve(args, "out", "."))
    model = load_model(model_cfg)
    scene_dir = Path(args.scene[0])
    refs, _ = _scene_pairs(scene_dir)

    rows: list[dict] = []
    for view_idx, ref_path in enumerate(refs):
        ref_img = load_image(ref_path)
        tensor = preprocess(ref_img, model_cfg, source=str(ref_path))
        detections = model.detect(tensor)
        if not detections:
            print(f"view {view_idx}: no detections, skipped",
                  file=sys.stderr)
            continue
        plan = make_degradation_plan(detections, sigma)
        frame = tensor.to_hwc().astype(np.uint8)
        series: dict[str, list[float]] = {"osim": [], "psnr": [], "ssim": []}
        n_steps = len(plan.order) + 1  # 0..K plus the full-image anchor
        for step in range(n_steps + 1):
            degraded = apply_object_blur(frame, detections, plan, step)
            report = evaluate_scene(
                [frame], [degraded], model,
                saliency_cfg=saliency_cfg,
                saliency_backend=saliency_backend,
                scene=scene_dir.name)
            series["osim"].append(report.osim)
            series["psnr"].append(psnr_metric(frame, degraded))
            series["ssim"].append(ssim_metric(frame, degraded))
        for metric, raw in series.items():
            finite = [v for v in raw if np.isfinite(v)]
            best, anchor = max(finite), raw[-1]
            if best == anchor:
                normalized = [float("nan")] * len(raw)
            else:
                normalized = [
                    float("nan") if not np.isfinite(v)
                    else normalize_series([v], best, anchor)[0]
                    for v in raw
                ]
            for step, (r, nv) in enumerate(zip(raw, normalized)):
                rows.append({
                    "view": view_idx, "metric": metric, "step": step,
                    "raw": "inf" if np.isinf(r) else f"{r:.9f}",
                    "normalized": "" if not np.isfinite(nv) else f"{nv:.9f}",
                })

    if not rows:
        print("no detections in any reference view", file=sys.stderr)
        return EXIT_UNDEFINED
    lines = ["view,metric,step,raw,normalized"]
    lines += [f"{r['view']},{r['metric']},{r['step']},{r['raw']},"
              f"{r['normalized']}" for r in rows]
    out_path = out_dir / f"{scene_dir.name}.degradation.csv"
    _atomic_write_text(out_path, "\n".join(lines) + "\n")
    print(f"wrote {out_path}")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# correlate
# --------------------------------------------------------------------------- #

def _report_metrics(report: dict) -> dict[str, float]:
    """Flatten a report's correlatable metric columns."""
    out = {"osim": report["osim"]}
    whole = report["baselines"]["whole_image"]
    patch = report["baselines"]["bbox_patch"]
    for name, value in (("psnr", whole["psnr"]), ("ssim", whole["ssim"]),
                        ("patch_psnr", patch["psnr"]),
                        ("patch_ssim", patch["ssim"])):
        if value != "inf" and value is not None:
            out[name] = float(value)
    for name, value in report.get("external_metrics", {}).items():
        out[name] = float(value)
    return out


def cmd_correlate(args: argparse.Namespace) -> int:
    warnings: list[str] = []
    mos = ingest_mos(args.mos, warnings)
    excluded = set((args.exclude or "").split(",")) - {""}

    by_key: dict[tuple[str, str], dict[str, float]] = {}
    fingerprints = set()
    for path in sorted(globmod.glob(args.reports)):
        report = json.loads(Path(path).read_text())
        key = (report["scene"], report["model"])
        if key[1] in excluded:
            continue
        fingerprints.add(report.get("fingerprint"))
        by_key[key] = _report_metrics(report)
    if len(fingerprints) > 1:
        print("warning: comparing reports with different config "
              "fingerprints", file=sys.stderr)

    missing = [k for k in by_key if k not in mos]
    for key in missing:
        print(f"warning: no MOS entry for {key}", file=sys.stderr)
    joined = {k: v for k, v in by_key.items() if k in mos}
    if not joined:
        print("no (scene, model) keys join MOS and reports", file=sys.stderr)
        return EXIT_CONFIG

    scenes = sorted({scene for scene, _ in joined})
    metrics = sorted({m for v in joined.values() for m in v})
    table: dict[str, dict[str, float]] = {}
    for metric in metrics:
        rhos, rs = [], []
        for scene in scenes:
            models = sorted(m for s, m in joined if s == scene
                            and metric in joined[(s, m)])
            if len(models) < 3:
                continue
            xs = [joined[(scene, m)][metric] for m in models]
            if metric in LOWER_IS_BETTER:
                xs = [-x for x in xs]
            ys = [mos[(scene, m)] for m in models]
            try:
                rhos.append(spearman(xs, ys))
                rs.append(pearson(xs, ys))
            except OsimError as exc:
                print(f"warning: {metric}/{scene}: {exc}", file=sys.stderr)
        if rhos:
            table[metric] = {"spearman": float(np.mean(rhos)),
                             "pearson": float(np.mean(rs)),
                             "scenes": len(rhos)}

    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"{'metric':<12} {'spearman':>9} {'pearson':>9} {'scenes':>7}")
    for metric, row in sorted(table.items()):
        print(f"{metric:<12} {row['spearman']:>9.3f} {row['pearson']:>9.3f} "
              f"{row['scenes']:>7d}")
    if args.out:
        _atomic_write_text(
            Path(args.out),
            json.dumps(table, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="detector file (.pt/.ts TorchScript, "
                   ".onnx) or stub fixture directory")
    p.add_argument("--layer", help="intermediate feature layer name "
                   "(default backbone.dark5)")
    p.add_argument("--conf", type=float, help="confidence threshold "
                   "(default 0.35)")
    p.add_argument("--input-width", dest="input_width", type=int)
    p.add_argument("--input-height", dest="input_height", type=int)
    p.add_argument("--classes", help="file with one class name per line")
    p.add_argument("--saliency", choices=("gbvs", "uniform", "file"))
    p.add_argument("--saliency-dir", dest="saliency_dir",
                   help="directory of per-view grayscale saliency PNGs")
    p.add_argument("--graph-sigma", dest="graph_sigma", type=float)
    p.add_argument("--power-iterations", dest="power_iterations", type=int)
    p.add_argument("--tolerance", dest="tolerance", type=float)
    p.add_argument("--map-resolution", dest="map_resolution", type=int)
    p.add_argument("--config", help="JSON or YAML config file")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osim",
        description="Object-centric similarity scoring for rendered "
                    "novel-view images")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="score ref/test scene pairs")
    p_eval.add_argument("--scene", action="append", required=True,
                        help="scene directory with ref/ and test/ subdirs "
                             "(repeatable)")
    _add_model_flags(p_eval)
    p_eval.add_argument("--model-name", dest="model_name")
    p_eval.add_argument("--parallelism", type=int)
    p_eval.add_argument("--overlay", action="store_true",
                        help="write low-quality-object overlay PNGs")
    p_eval.add_argument("--external", action="append",
                        help="externally computed metric, name=value "
                             "(repeatable)")
    p_eval.set_defaults(func=cmd_evaluate)

    p_deg = sub.add_parser("degrade",
                           help="cumulative per-object blur study")
    p_deg.add_argument("--scene", action="append", required=True)
    p_deg.add_argument("--sigma", type=float, help="blur sigma in pixels")
    p_deg.add_argument("--order", choices=("area",), default="area")
    _add_model_flags(p_deg)
    p_deg.set_defaults(func=cmd_degrade)

    p_corr = sub.add_parser("correlate",
                            help="rank/linear correlation against MOS")
    p_corr.add_argument("--mos", required=True, help="scene,model,mos CSV")
    p_corr.add_argument("--reports", required=True,
                        help="glob of report JSON files")
    p_corr.add_argument("--exclude", help="comma-separated model names to "
                                          "drop as outliers")
    p_corr.add_argument("--out", help="write the table as JSON here")
    p_corr.set_defaults(func=cmd_correlate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args._file_config = _load_file_config(getattr(args, "config", None))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except NoObjectsDetected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (OsimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
