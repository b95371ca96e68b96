"""Acceptance suite: ten end-to-end criteria, one test (and one printed
pass/fail line) each. Tolerances are part of the contract; see README."""

import time

import numpy as np
import pytest

from osim.backend import FeatureMap, ModelConfig, load_model, preprocess
from osim.baselines import psnr, ssim
from osim.harness import (
    apply_object_blur,
    gaussian_blur,
    make_degradation_plan,
    normalize_for_leaderboard,
    normalize_series,
    pearson,
    spearman,
)
from osim.metric import (
    ClassAggregate,
    FeatBox,
    ObjectIndexRecord,
    collect_class_indices,
    object_index_value,
)
from osim.saliency import (
    SaliencyConfig,
    SaliencyMap,
    build_transition_matrix,
    class_saliency,
    compute_saliency,
    object_saliency,
    stationary_distribution,
)
from osim.scoring import compute_osim, evaluate_scene
from oracles import (
    class_mean_oracle,
    object_index_oracle,
    pearson_oracle,
    psnr_oracle,
    spearman_oracle,
    ssim_oracle,
    weighted_mean_oracle,
)


def _report(name: str) -> None:
    # reached only when every assert above it held
    print(f"ACCEPTANCE {name}: PASS")


def _scene_paths(scene_dir):
    return ([str(p) for p in sorted((scene_dir / "ref").glob("*.png"))],
            [str(p) for p in sorted((scene_dir / "test").glob("*.png"))])


def test_criterion_01_identity(stub_config, identity_scene):
    started = time.monotonic()
    model = load_model(stub_config)
    refs, tests = _scene_paths(identity_scene["scene"])
    report = evaluate_scene(refs, tests, model)
    elapsed = time.monotonic() - started

    assert report.osim == pytest.approx(1.0, abs=1e-6)
    whole = report.baselines["whole_image"]
    assert whole.ssim == pytest.approx(1.0, abs=1e-12)
    assert whole.psnr == float("inf")
    assert whole.to_dict()["psnr"] == "inf"
    assert elapsed < 30.0
    _report("1 (identity: evaluate(ref, ref) == 1, < 30 s)")


def test_criterion_02_range():
    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(200):
        n_objects = int(rng.integers(1, 7))
        h, w, d = (int(rng.integers(2, 9)) for _ in range(3))
        ref = FeatureMap(rng.normal(
            scale=rng.uniform(0.1, 10.0), size=(h, w, d)).astype(np.float32))
        test = FeatureMap(rng.normal(
            scale=rng.uniform(0.1, 10.0), size=(h, w, d)).astype(np.float32))
        records, pairs = [], []
        for j in range(n_objects):
            x1 = int(rng.integers(0, w)); x2 = int(rng.integers(x1, w))
            y1 = int(rng.integers(0, h)); y2 = int(rng.integers(y1, h))
            cid = int(rng.integers(0, 10))
            r = object_index_value(ref, test, FeatBox(x1, y1, x2, y2))
            records.append(ObjectIndexRecord(0, j, cid, r))
            pairs.append((cid, float(rng.uniform(0.0, 1.0))))
        aggregates = collect_class_indices(records)
        weights = dict(class_saliency(pairs))
        for agg in aggregates:
            agg.s_value = weights[agg.class_id]
        value = compute_osim(aggregates)
        if not (0.0 <= value <= 1.0):
            violations += 1
    assert violations == 0
    _report("2 (range: OSIM in [0, 1], 200 random fixtures, 0 violations)")


def test_criterion_03_equation_oracles():
    rng = np.random.default_rng(3)
    started = time.monotonic()
    worst = 0.0
    for _ in range(1000):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        d = int(rng.integers(1, 17))
        ref = rng.normal(size=(h, w, d)).astype(np.float32)
        test = rng.normal(size=(h, w, d)).astype(np.float32)
        x1 = int(rng.integers(0, w)); x2 = int(rng.integers(x1, w))
        y1 = int(rng.integers(0, h)); y2 = int(rng.integers(y1, h))
        got = object_index_value(FeatureMap(ref), FeatureMap(test),
                                 FeatBox(x1, y1, x2, y2))
        worst = max(worst, abs(got - object_index_oracle(
            ref, test, x1, y1, x2, y2)))

        n = int(rng.integers(1, 11))
        cids = [int(c) for c in rng.integers(0, 10, n)]
        r_values = [float(v) for v in rng.uniform(0.0, 1.0, n)]
        s_values = [float(v) for v in rng.uniform(0.0, 1.0, n)]
        records = [ObjectIndexRecord(0, j, c, r)
                   for j, (c, r) in enumerate(zip(cids, r_values))]
        aggregates = collect_class_indices(records)
        o_oracle = class_mean_oracle(zip(cids, r_values))
        for agg in aggregates:
            worst = max(worst, abs(agg.o_value - o_oracle[agg.class_id]))

        smap = SaliencyMap(rng.uniform(0.0, 1.0, size=(h * 4, w * 4)))
        sx2 = int(rng.integers(0, w * 4)); sy2 = int(rng.integers(0, h * 4))
        sx1 = int(rng.integers(0, sx2 + 1)); sy1 = int(rng.integers(0, sy2 + 1))
        got_s = object_saliency(smap, (sx1, sy1, sx2, sy2))
        want_s = float(np.mean([smap.values[yy, xx]
                                for yy in range(sy1, sy2 + 1)
                                for xx in range(sx1, sx2 + 1)]))
        worst = max(worst, abs(got_s - want_s))

        s_oracle = class_mean_oracle(zip(cids, s_values))
        for cid, got_cs in class_saliency(list(zip(cids, s_values))):
            worst = max(worst, abs(got_cs - s_oracle[cid]))

        for agg in aggregates:
            agg.s_value = s_oracle[agg.class_id]
        o_by = {a.class_id: a.o_value for a in aggregates}
        s_by = {a.class_id: a.s_value for a in aggregates}
        worst = max(worst, abs(compute_osim(aggregates)
                               - weighted_mean_oracle(o_by, s_by)))
    elapsed = time.monotonic() - started
    assert worst <= 1e-6
    assert elapsed < 60.0
    _report(f"3 (equation oracles: 1000 trials, max abs err {worst:.2e} "
            f"<= 1e-6, {elapsed:.1f} s < 60 s)")


def _degradation_series(img, model):
    tensor = preprocess(img, model.config)
    frame = tensor.to_hwc().astype(np.uint8)
    detections = model.detect(tensor)
    assert detections, "probe photo must contain detectable objects"
    smap = compute_saliency(frame, SaliencyConfig())
    plan = make_degradation_plan(detections, blur_sigma=5.0)
    per_step_saliency = [object_saliency(smap, d.bbox) for d in plan.order]
    raw = []
    for step in range(len(plan.order) + 2):
        degraded = apply_object_blur(frame, detections, plan, step)
        raw.append(evaluate_scene([frame], [degraded], model).osim)
    normalized = normalize_series(raw, best=raw[0], full_degraded=raw[-1])
    highest_saliency_step = int(np.argmax(per_step_saliency)) + 1
    return normalized, highest_saliency_step


def test_criterion_04_degradation_monotonicity(toy_handle, three_photos):
    largest_drop_hits = 0
    for img in three_photos:
        series, hs_step = _degradation_series(img, toy_handle)
        steps = np.diff(series)
        assert np.all(steps <= 0.01), f"series not non-increasing: {series}"
        object_drops = -steps[:len(steps) - 1]  # exclude the full-blur anchor
        if int(np.argmax(object_drops)) + 1 == hs_step:
            largest_drop_hits += 1
    assert largest_drop_hits >= 1
    _report("4 (degradation: sigma=5 series non-increasing +-0.01/step; "
            f"highest-saliency object gave the largest drop in "
            f"{largest_drop_hits}/3 photos, >= 1 required)")


def test_criterion_05_object_sensitivity(toy_handle):
    from synth import Blob, make_photo

    img = make_photo([
        Blob("red", 336, 336, 64, texture=90.0),
        Blob("green", 112, 496, 64, texture=90.0),
        Blob("blue", 496, 112, 64, texture=90.0),
    ], seed=4)
    tensor = preprocess(img, toy_handle.config)
    frame = tensor.to_hwc().astype(np.uint8)
    detections = toy_handle.detect(tensor)
    assert detections

    sigma = 5.0
    # keep the background blur one feature cell + one blur radius clear of
    # every bbox so it stays strictly on non-detected background
    clearance = 32 + int(np.ceil(3 * sigma))
    inside = np.zeros(frame.shape[:2], dtype=bool)
    inflated = np.zeros(frame.shape[:2], dtype=bool)
    for det in detections:
        x1, y1, x2, y2 = det.bbox
        inside[y1:y2 + 1, x1:x2 + 1] = True
        inflated[max(0, y1 - clearance):y2 + 1 + clearance,
                 max(0, x1 - clearance):x2 + 1 + clearance] = True
    blurred = np.clip(np.round(gaussian_blur(frame, sigma)), 0,
                      255).astype(np.uint8)
    bg_blur = frame.copy()
    bg_blur[~inflated] = blurred[~inflated]
    obj_blur = frame.copy()
    obj_blur[inside] = blurred[inside]

    osim_bg = evaluate_scene([frame], [bg_blur], toy_handle).osim
    osim_obj = evaluate_scene([frame], [obj_blur], toy_handle).osim
    psnr_bg = psnr(frame, bg_blur)
    psnr_obj = psnr(frame, obj_blur)

    assert osim_bg > osim_obj + 0.05
    assert psnr_bg <= psnr_obj + 1.0  # reversed ranking, or within 1 dB
    _report("5 (object sensitivity: OSIM bg-blur "
            f"{osim_bg:.3f} > obj-blur {osim_obj:.3f} + 0.05; PSNR "
            f"{psnr_bg:.1f} vs {psnr_obj:.1f} dB ranks the other way)")


def test_criterion_06_statistics():
    rng = np.random.default_rng(6)
    vectors = [
        ([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]),
        ([1.0, 2.0, 3.0, 4.0], [8.0, 6.0, 4.0, 2.0]),
        ([1.0, 1.0, 2.0, 3.0], [4.0, 4.0, 5.0, 6.0]),   # ties in both
        ([5.0, 1.0, 1.0, 9.0], [2.0, 7.0, 7.0, 1.0]),   # tied pairs
        ([1.0, 2.0, 2.0, 2.0, 3.0], [1.0, 4.0, 4.0, 4.0, 9.0]),
    ]
    while len(vectors) < 20:
        n = int(rng.integers(3, 12))
        x = np.round(rng.normal(size=n), 1)
        y = np.round(rng.normal(size=n), 1)
        if len(set(x)) > 1 and len(set(y)) > 1:
            vectors.append((list(x), list(y)))
    worst = 0.0
    for x, y in vectors:
        worst = max(worst, abs(pearson(x, y) - pearson_oracle(x, y)))
        worst = max(worst, abs(spearman(x, y) - spearman_oracle(x, y)))
    assert worst <= 1e-12

    for _ in range(100):
        n = int(rng.integers(4, 20))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        transformed = np.exp(2.0 * x) + 1.0  # strictly monotone in x
        assert spearman(x, y) == pytest.approx(
            spearman(transformed, y), abs=1e-12)
    _report(f"6 (statistics: 20 oracle vectors, max err {worst:.1e} <= "
            "1e-12; spearman monotone-invariant on 100 trials)")


def test_criterion_07_ssim_psnr_conformance():
    rng = np.random.default_rng(7)
    worst_ssim, worst_psnr = 0.0, 0.0
    for _ in range(50):
        ref = rng.integers(0, 256, (64, 64), dtype=np.uint8)
        test = np.clip(ref.astype(np.int32)
                       + rng.integers(-40, 41, ref.shape), 0,
                       255).astype(np.uint8)
        worst_ssim = max(worst_ssim,
                         abs(ssim(ref, test) - ssim_oracle(ref, test)))
        worst_psnr = max(worst_psnr,
                         abs(psnr(ref, test) - psnr_oracle(ref, test)))
    assert worst_ssim <= 1e-6
    assert worst_psnr <= 1e-9
    _report(f"7 (SSIM/PSNR conformance: 50 pairs, max err ssim "
            f"{worst_ssim:.1e} <= 1e-6, psnr {worst_psnr:.1e} <= 1e-9 dB)")


def test_criterion_08_saliency_sanity():
    rng = np.random.default_rng(8)
    # probability mass is conserved at every power-iteration step
    for _ in range(5):
        grid = rng.random((12, 12))
        matrix = build_transition_matrix(grid, sigma=5.0)
        log: list[float] = []
        stationary_distribution(matrix, 1e-6, 200, sum_log=log)
        assert log
        for total in log:
            assert total == pytest.approx(1.0, abs=1e-9)

    # single bright square attracts the argmax in 10/10 placements
    hits = 0
    for _ in range(10):
        img = np.full((192, 192, 3), 40, dtype=np.uint8)
        x = int(rng.integers(8, 136))
        y = int(rng.integers(8, 136))
        img[y:y + 48, x:x + 48] = 235
        sal = compute_saliency(img, SaliencyConfig())
        peak_y, peak_x = np.unravel_index(int(np.argmax(sal.values)),
                                          sal.values.shape)
        if x <= peak_x < x + 48 and y <= peak_y < y + 48:
            hits += 1
    assert hits == 10
    _report("8 (saliency: stationary mass 1 +- 1e-9 every iteration; "
            f"bright-square argmax inside the square {hits}/10)")


def test_criterion_09_normalization_rules():
    golden = [
        ("psnr", [10.0, 25.0, 50.0], [0.2, 0.5, 1.0]),
        ("lpips", [0.0, 0.3, 1.0], [1.0, 0.7, 0.0]),
        ("mos", [1.0, 2.0, 5.0], [0.0, 0.25, 1.0]),
        ("fid", [0.0, 25.0, 100.0], [1.0, 0.75, 0.0]),
        ("cd", [0.05, 0.5, 1.0], [0.95, 0.5, 0.0]),
        ("ssim", [0.2, 0.6, 1.0], [0.2, 0.6, 1.0]),
        ("osim", [0.1, 0.55, 0.97], [0.1, 0.55, 0.97]),
    ]
    for column, raw, expected in golden:
        got = normalize_for_leaderboard(column, raw)
        assert got == pytest.approx(expected, abs=1e-12), column
    _report("9 (leaderboard normalization matches the golden tables)")


def test_criterion_10_byte_stable_reports(stub_config, identity_scene):
    model = load_model(stub_config)
    refs, tests = _scene_paths(identity_scene["scene"])
    payloads = {evaluate_scene(refs, tests, model, parallelism=1).to_json()
                for _ in range(5)}
    payloads |= {evaluate_scene(refs, tests, model, parallelism=8).to_json()
                 for _ in range(5)}
    assert len(payloads) == 1
    _report("10 (byte-stable report across 5 runs at parallelism 1 and 8)")
