import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import correlate2d

from gazeguard.gazenet import (
    GazeTrainConfig, ablation, angular_error_deg, angular_errors_deg, build_backbone, build_gaze_model,
    finetune, gaze_forward, gaze_l2_loss, holdout_split, images_to_arrays,
)
from gazeguard.gradcore import check_loss_gradient, grad_check
from gazeguard.pretext import PretextConfig
from gazeguard.synthcam import GazeAngles, HeadPose, SessionConfig, generate_image_dataset


def test_backbone_parameter_counts():
    assert build_backbone("lenet5ish").n_parameters() == 416 + 12_832 + 295_040
    assert build_backbone("tinyconv").n_parameters() == 208 + 114_816
    model = build_gaze_model(build_backbone("tinyconv"))
    assert model.graph.n_parameters() == 115_024 + 130 * 64 + 64 + 64 * 2 + 2


@pytest.mark.parametrize("arch", ["lenet5ish", "tinyconv"])
def test_backbone_output_shape(arch):
    g = build_backbone(arch)
    assert g.output_shape == (128,)
    assert g.forward(np.zeros((3, 1, 36, 60), np.float32)).shape == (3, 128)


def test_unknown_arch():
    with pytest.raises(ValueError, match="resnet"):
        build_backbone("resnet")


def test_zero_head_outputs_zero():
    model = build_gaze_model(build_backbone("tinyconv"))
    last = model.graph.layers[-1]
    last.params["W"][...] = 0
    last.params["b"][...] = 0
    out = gaze_forward(model, np.random.default_rng(0).uniform(size=(36, 60)), HeadPose(0.1, 0.2))
    assert out == GazeAngles(0.0, 0.0)


def test_forward_matches_scipy_oracle(rng):
    model = build_gaze_model(build_backbone("tinyconv", seed=3), seed=3)
    L = model.graph.layers
    px = rng.uniform(size=(36, 60))
    conv_w, conv_b = L[0].params["W"].astype(float), L[0].params["b"].astype(float)
    maps = np.stack([correlate2d(px, conv_w[o, 0], mode="valid") + conv_b[o] for o in range(8)])
    maps = np.maximum(maps, 0)
    for _ in range(2):
        c, h, w = maps.shape
        maps = maps[:, :h // 2 * 2, :w // 2 * 2].reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))
    feat = maps.reshape(-1) @ L[5].params["W"] + L[5].params["b"]
    hidden = np.maximum(np.concatenate([feat, [0.2, -0.1]]) @ L[7].params["W"] + L[7].params["b"], 0)
    expected = hidden @ L[9].params["W"] + L[9].params["b"]
    got = gaze_forward(model, px, HeadPose(0.2, -0.1))
    np.testing.assert_allclose([got.yaw, got.pitch], expected, rtol=1e-4, atol=1e-5)


def test_head_pose_changes_prediction(rng):
    model = build_gaze_model(build_backbone("tinyconv"))
    px = rng.uniform(size=(36, 60))
    assert gaze_forward(model, px, HeadPose(0, 0)) != gaze_forward(model, px, HeadPose(0.5, 0.0))


def test_gaze_model_gradcheck(rng):
    model = build_gaze_model(build_backbone("tinyconv", seed=1), seed=1)
    rep = grad_check(model.graph, rng.uniform(size=(2, 1, 36, 60)), aux=rng.normal(size=(2, 2)),
                     max_per_param=30)
    assert rep.passed(1e-5), str(rep)


def test_l2_loss_examples():
    loss, grad = gaze_l2_loss(np.array([[3.0, 4.0]]), np.array([[0.0, 0.0]]))
    assert loss == 5.0
    np.testing.assert_allclose(grad, [[0.6, 0.8]])
    loss, grad = gaze_l2_loss(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([[1.0, 1.0], [0.0, 2.0]]))
    assert loss == 1.0
    np.testing.assert_array_equal(grad, [[0, 0], [0, -0.5]])


def test_l2_loss_gradient(rng):
    truth = rng.normal(size=(5, 2))
    assert check_loss_gradient(lambda p: gaze_l2_loss(p, truth), rng.normal(size=(5, 2))) < 1e-6


def test_l2_loss_rejects_mismatched_batch():
    with pytest.raises(ValueError):
        gaze_l2_loss(np.zeros((2, 2)), np.zeros((3, 2)))


def test_angular_error_examples():
    assert angular_error_deg(GazeAngles(0.3, 0.1), GazeAngles(0.3, 0.1)) == pytest.approx(0, abs=1e-6)
    assert angular_error_deg(GazeAngles(0.0, 0.0), GazeAngles(0.1, 0.0)) == pytest.approx(math.degrees(0.1), abs=1e-9)
    assert angular_error_deg(GazeAngles(0.0, 0.0), GazeAngles(0.0, -0.2)) == pytest.approx(math.degrees(0.2), abs=1e-9)


ang = st.floats(-1.2, 1.2)


@given(ang, ang, ang, ang)
def test_angular_error_symmetric_and_vectorized(a, b, c, d):
    p, t = GazeAngles(a, b), GazeAngles(c, d)
    e = angular_error_deg(p, t)
    assert 0 <= e <= 180
    assert e == pytest.approx(angular_error_deg(t, p), abs=1e-9)
    assert angular_errors_deg(np.array([[a, b]]), np.array([[c, d]]))[0] == pytest.approx(e, abs=1e-6)


@pytest.fixture(scope="module")
def small_images():
    return images_to_arrays(generate_image_dataset(SessionConfig(seed=4), 64))


def test_frozen_finetune_keeps_backbone(small_images):
    model = build_gaze_model(build_backbone("tinyconv", seed=2), seed=2)
    before = model.backbone_digest()
    res = finetune(model, small_images, GazeTrainConfig(epochs=5, lr=1e-2, momentum=0.9, freeze_backbone=True))
    assert model.backbone_digest() == before
    assert res.trace[-1][1] < res.trace[0][1]


def test_unfrozen_finetune_moves_backbone(small_images):
    model = build_gaze_model(build_backbone("tinyconv", seed=2), seed=2)
    before = model.backbone_digest()
    finetune(model, small_images, GazeTrainConfig(epochs=2, lr=1e-2, freeze_backbone=False))
    assert model.backbone_digest() != before


def test_finetune_deterministic(small_images):
    def run():
        m = build_gaze_model(build_backbone("tinyconv", seed=5), seed=5)
        return finetune(m, small_images, GazeTrainConfig(epochs=3, lr=1e-2, seed=5)).trace
    assert run() == run()


def test_holdout_split_partitions():
    train, test = holdout_split(100, 0.2, 0)
    assert len(test) == 20 and len(train) == 80
    assert sorted(np.concatenate([train, test])) == list(range(100))


def test_ablation_runs_paired(small_images):
    res = ablation(small_images, ["tinyconv"], [0, 1], PretextConfig(epochs=1, batch_size=16),
                   GazeTrainConfig(epochs=2, lr=1e-2))
    assert [(r.variant, r.seed) for r in res.runs] == [
        ("baseline", 0), ("pretrained", 0), ("baseline", 1), ("pretrained", 1)]
    (arch, base, ours), = res.summary()
    assert base == pytest.approx(np.mean([r.mean_angular_error_deg for r in res.runs if r.variant == "baseline"]))
    assert "tinyconv" in res.table()
