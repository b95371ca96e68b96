from __future__ import annotations

import numpy as np
import pytest

cv2 = pytest.importorskip("cv2")

from osim.backend import (
    Detection,
    FeatureMap,
    ModelConfig,
    load_model,
    write_detection_fixture,
    write_feature_fixture,
)
from synth import Blob, make_photo
from toydet import TOY_CLASSES, export_toy_detector


@pytest.fixture(scope="session")
def toy_model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "toydet.pt"
    return export_toy_detector(path)


@pytest.fixture(scope="session")
def toy_config(toy_model_path):
    return ModelConfig(model_path=str(toy_model_path),
                       class_names=TOY_CLASSES)


@pytest.fixture(scope="session")
def toy_handle(toy_config):
    return load_model(toy_config)


@pytest.fixture(scope="session")
def three_photos():
    """Multi-object photos for detector-driven degradation tests.

    Blobs are small enough (64 px on stride-32 cell centers) that each one
    yields a single detection, and every photo carries one bright, heavily
    textured blob that dominates both saliency and blur sensitivity."""
    return [
        make_photo([
            Blob("red", 336, 336, 64, texture=90.0),
            Blob("green", 112, 496, 64, texture=10.0, brightness=0.6),
            Blob("blue", 496, 112, 64, texture=10.0, brightness=0.6),
        ], seed=1),
        make_photo([
            Blob("green", 336, 304, 64, texture=90.0),
            Blob("blue", 144, 144, 64, texture=10.0, brightness=0.6),
            Blob("red", 528, 464, 64, texture=10.0, brightness=0.6),
        ], seed=2),
        make_photo([
            Blob("blue", 304, 368, 64, texture=90.0),
            Blob("red", 496, 528, 64, texture=10.0, brightness=0.6),
            Blob("green", 112, 112, 64, texture=10.0, brightness=0.6),
        ], seed=3),
    ]


def _write_scene(root, name, ref_images, test_images):
    scene = root / name
    (scene / "ref").mkdir(parents=True)
    (scene / "test").mkdir(parents=True)
    for i, (ref, test) in enumerate(zip(ref_images, test_images)):
        cv2.imwrite(str(scene / "ref" / f"{i:03d}.png"),
                    cv2.cvtColor(ref, cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(scene / "test" / f"{i:03d}.png"),
                    cv2.cvtColor(test, cv2.COLOR_RGB2BGR))
    return scene


STUB_DETECTIONS = [
    [Detection(0, 0.9, (64, 64, 223, 223)),
     Detection(2, 0.6, (320, 384, 479, 543))],
    [Detection(0, 0.8, (96, 320, 255, 479))],
]


def _stub_features(rng, shape=(20, 20, 8)):
    return FeatureMap(rng.uniform(-1.0, 1.0, size=shape).astype(np.float32))


@pytest.fixture(scope="session")
def identity_scene(tmp_path_factory, three_photos):
    """Two-view scene where test == ref, with matching stub fixtures."""
    root = tmp_path_factory.mktemp("identity")
    scene = _write_scene(root, "scene", three_photos[:2], three_photos[:2])
    fixtures = root / "fixtures"
    fixtures.mkdir()
    rng = np.random.default_rng(11)
    for i, dets in enumerate(STUB_DETECTIONS):
        feat = _stub_features(rng)
        write_detection_fixture(fixtures / f"ref.{i:03d}.detections.json",
                                dets)
        write_feature_fixture(fixtures / f"ref.{i:03d}.features.bin", feat)
        write_feature_fixture(fixtures / f"test.{i:03d}.features.bin", feat)
    return {"scene": scene, "fixtures": fixtures}


@pytest.fixture(scope="session")
def golden_scene(tmp_path_factory, three_photos):
    """Two-view scene whose test features are a seeded perturbation of the
    reference features."""
    root = tmp_path_factory.mktemp("golden")
    test_images = [np.clip(img.astype(int) + 8, 0, 255).astype(np.uint8)
                   for img in three_photos[:2]]
    scene = _write_scene(root, "scene", three_photos[:2], test_images)
    fixtures = root / "fixtures"
    fixtures.mkdir()
    rng = np.random.default_rng(23)
    for i, dets in enumerate(STUB_DETECTIONS):
        ref_feat = _stub_features(rng)
        noise = rng.normal(0.0, 0.4, size=ref_feat.data.shape)
        test_feat = FeatureMap((ref_feat.data + noise).astype(np.float32))
        write_detection_fixture(fixtures / f"ref.{i:03d}.detections.json",
                                dets)
        write_feature_fixture(fixtures / f"ref.{i:03d}.features.bin",
                              ref_feat)
        write_feature_fixture(fixtures / f"test.{i:03d}.features.bin",
                              test_feat)
    return {"scene": scene, "fixtures": fixtures}


@pytest.fixture
def stub_config(identity_scene):
    return ModelConfig(model_path=str(identity_scene["fixtures"]),
                       class_names=TOY_CLASSES)
