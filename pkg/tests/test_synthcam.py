import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazeguard.errors import ConfigError
from gazeguard.synthcam import (
    IRIS_GAIN_X, GazeAngles, HeadPose, ScreenHit, SessionConfig, generate_feature_dataset,
    generate_image_dataset, gaze_to_vector, intersect_screen, label_sample, make_session_config,
    render_eye_image, vector_to_gaze,
)

angle = st.floats(-1.5, 1.5, allow_nan=False)


def spherical_oracle(yaw, pitch):
    # rotate the forward axis (0, 0, -1): pitch about x, then yaw about y
    fwd = np.array([0.0, 0.0, -1.0])
    rx = np.array([[1, 0, 0], [0, math.cos(pitch), -math.sin(pitch)], [0, math.sin(pitch), math.cos(pitch)]])
    ry = np.array([[math.cos(yaw), 0, -math.sin(yaw)], [0, 1, 0], [math.sin(yaw), 0, math.cos(yaw)]])
    return ry @ rx @ fwd


def ray_march(eye, gaze, step=1e-4):
    """Walk the ray until z changes sign, then bisect."""
    p = np.asarray(eye, float)
    d = spherical_oracle(gaze.yaw, gaze.pitch)
    t0, t1 = 0.0, step
    while p[2] + t1 * d[2] > 0:
        t0, t1 = t1, t1 * 2
    for _ in range(200):
        mid = (t0 + t1) / 2
        if p[2] + mid * d[2] > 0:
            t0 = mid
        else:
            t1 = mid
    return p + t1 * d


def test_gaze_to_vector_forward():
    np.testing.assert_allclose(gaze_to_vector(GazeAngles(0, 0)), [0, 0, -1], atol=0)


def test_gaze_to_vector_limiting_yaw():
    v = gaze_to_vector(GazeAngles(math.pi / 2 - 1e-9, 0))
    np.testing.assert_allclose(v, [1, 0, 0], atol=1e-8)
    assert v[2] < 0


def test_gaze_to_vector_matches_rotation_oracle():
    v = gaze_to_vector(GazeAngles(0.3, -0.2))
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    np.testing.assert_allclose(v, spherical_oracle(0.3, -0.2), atol=1e-15)


@settings(max_examples=300)
@given(angle, angle)
def test_gaze_vector_unit_and_round_trip(yaw, pitch):
    v = gaze_to_vector(GazeAngles(yaw, pitch))
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert v[2] < 0
    back = vector_to_gaze(v)
    assert abs(back.yaw - yaw) < 1e-9 and abs(back.pitch - pitch) < 1e-9


def test_unit_norm_over_ten_thousand_angles(rng):
    for yaw, pitch in rng.uniform(-1.5707, 1.5707, (10_000, 2)):
        assert abs(np.linalg.norm(gaze_to_vector(GazeAngles(yaw, pitch))) - 1) < 1e-12


def test_intersect_perpendicular():
    hit = intersect_screen((0, 0, 0.6), GazeAngles(0, 0))
    assert hit == ScreenHit(0.0, 0.0)


def test_intersect_45_degrees():
    hit = intersect_screen((0, 0, 0.6), GazeAngles(math.pi / 4, 0))
    assert hit.x_m == pytest.approx(0.6 * math.tan(math.pi / 4), abs=1e-12)
    assert hit.y_m == pytest.approx(0.0, abs=1e-12)


def test_intersect_matches_ray_march():
    eye = (0.1, -0.05, 0.5)
    g = GazeAngles(-0.2, 0.1)
    hit = intersect_screen(eye, g)
    p = ray_march(eye, g)
    assert abs(hit.x_m - p[0]) < 1e-9 and abs(hit.y_m - p[1]) < 1e-9


def test_intersect_sentinel_for_backward_ray():
    # |yaw| > pi/2 points away from the screen
    assert intersect_screen((0, 0, 0.5), GazeAngles(math.pi, 0)) is None


def test_intersect_rejects_eye_behind_screen():
    with pytest.raises(ValueError):
        intersect_screen((0, 0, -0.1), GazeAngles(0, 0))


def test_label_center_and_sentinel(cfg):
    assert label_sample(ScreenHit(0, 0), cfg) == 1
    assert label_sample(None, cfg) == 0


def test_label_boundary_is_closed():
    cfg = SessionConfig(screen_width_m=0.5, screen_height_m=0.3, margin_m=0.25)
    # exactly representable edges: 0.25 + 0.25, 0.15 + 0.25
    assert label_sample(ScreenHit(0.5, 0.0), cfg) == 1
    assert label_sample(ScreenHit(-0.5, 0.4), cfg) == 1
    assert label_sample(ScreenHit(np.nextafter(0.5, 1), 0.0), cfg) == 0


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 0.2), st.floats(0, 0.2))
def test_label_monotone_in_margin(x, y, m1, m2):
    small, big = sorted((m1, m2))
    hit = ScreenHit(x, y)
    lo = label_sample(hit, SessionConfig(margin_m=small))
    hi = label_sample(hit, SessionConfig(margin_m=big))
    assert lo <= hi


def iris_centroid_col(pixels):
    dark = pixels < 0.2
    cols = np.nonzero(dark)[1]
    return cols.mean()


def test_render_centered_iris():
    img = render_eye_image(GazeAngles(0, 0), HeadPose(0, 0), seed=1)
    assert img.pixels.shape == (36, 60)
    rows, cols = np.nonzero(img.pixels < 0.2)
    assert abs(cols.mean() - 30) < 0.5 and abs(rows.mean() - 18) < 0.5


def test_render_deterministic():
    a = render_eye_image(GazeAngles(0.2, -0.1), HeadPose(0.1, 0.3), seed=9)
    b = render_eye_image(GazeAngles(0.2, -0.1), HeadPose(0.1, 0.3), seed=9)
    assert np.array_equal(a.pixels, b.pixels)


def test_render_iris_shift_follows_gain():
    base = iris_centroid_col(render_eye_image(GazeAngles(0, 0), HeadPose(0, 0), 3).pixels)
    moved = iris_centroid_col(render_eye_image(GazeAngles(0.3, 0), HeadPose(0, 0), 3).pixels)
    assert abs((moved - base) - IRIS_GAIN_X * 0.3) <= 1.0


def test_render_rejects_iris_outside_sclera():
    with pytest.raises(ValueError):
        render_eye_image(GazeAngles(1.2, 0.9), HeadPose(0, 0), 0)


@given(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(-0.6, 0.6), st.floats(-0.6, 0.6))
@settings(max_examples=30)
def test_render_pixels_in_unit_range(y, p, hy, hp):
    px = render_eye_image(GazeAngles(y, p), HeadPose(hy, hp), 0, pixel_noise=0.2).pixels
    assert px.shape == (36, 60) and px.min() >= 0 and px.max() <= 1


def test_image_dataset_deterministic(cfg):
    a = generate_image_dataset(cfg.model_copy(update={"seed": 7}), 10)
    b = generate_image_dataset(cfg.model_copy(update={"seed": 7}), 10)
    assert len(a) == 10
    for x, y in zip(a, b):
        assert np.array_equal(x.pixels, y.pixels) and x.gaze == y.gaze and x.head == y.head


def test_image_dataset_yaw_mean_statistics():
    cfg = SessionConfig(seed=3, yaw_range_rad=(-0.2, 0.6), label_noise_deg=0)
    yaws = np.array([im.gaze.yaw for im in generate_image_dataset(cfg, 1000)])
    mid = 0.2
    se = (0.8 / math.sqrt(12)) / math.sqrt(1000)
    assert abs(yaws.mean() - mid) < 3 * se


def test_zero_label_noise_keeps_render_parameters():
    cfg = SessionConfig(seed=4, label_noise_deg=0, pixel_noise=0)
    for im in generate_image_dataset(cfg, 5):
        again = render_eye_image(im.gaze, im.head, 0, pixel_noise=0)
        assert np.array_equal(again.pixels, im.pixels)


def test_image_dataset_rejects_nonpositive_count(cfg):
    with pytest.raises(ConfigError):
        generate_image_dataset(cfg, 0)


def test_forced_on_screen_all_normal():
    cfg = SessionConfig(yaw_range_rad=(0, 0), pitch_range_rad=(0, 0), head_offset_range_m=(0, 0),
                        balanced=False, seed=1)
    assert all(r.label == 1 for r in generate_feature_dataset(cfg, 200))


def test_forced_off_screen_all_abnormal():
    cfg = SessionConfig(yaw_range_rad=(math.pi / 3, math.pi / 3), distance_range_m=(0.5, 0.5),
                        screen_width_m=0.5, balanced=False, seed=1)
    assert 0.5 * math.tan(math.pi / 3) > 0.25 + cfg.margin_m + 0.03
    assert all(r.label == 0 for r in generate_feature_dataset(cfg, 200))


def test_balanced_sampler_counts():
    records = generate_feature_dataset(SessionConfig(seed=11, balanced=True), 50_000)
    frac = sum(r.label for r in records) / len(records)
    assert abs(frac - 0.5) <= 0.01


def test_balanced_sampler_impossible_config_errors():
    cfg = SessionConfig(yaw_range_rad=(0, 0), pitch_range_rad=(0, 0), balanced=True)
    with pytest.raises(ConfigError):
        generate_feature_dataset(cfg, 2)


def test_feature_records_shape_and_determinism(cfg):
    a = generate_feature_dataset(cfg, 50)
    b = generate_feature_dataset(cfg, 50)
    assert a == b
    for r in a:
        assert len(r.features()) == 7 and r.distance_m > 0 and r.label in (0, 1)


def test_feature_labels_recomputed_from_geometry(cfg):
    half_w = cfg.screen_width_m / 2 + cfg.margin_m
    half_h = cfg.screen_height_m / 2 + cfg.margin_m
    for r in generate_feature_dataset(cfg, 2000):
        hx, hy, d = r.geometry.head_position
        g = r.geometry.gaze
        x = hx + d * math.tan(g.yaw)
        y = hy + d * math.tan(g.pitch) / math.cos(g.yaw)
        assert r.label == int(abs(x) <= half_w and abs(y) <= half_h)


@pytest.mark.parametrize("bad", [
    {"screen_width_m": 0},
    {"distance_range_m": (0.0, 1.0)},
    {"distance_range_m": (0.8, 0.5)},
    {"yaw_range_rad": (0.3, 0.1)},
    {"pitch_range_rad": (-1.6, 0.0)},
    {"unknown_key": 1},
])
def test_invalid_session_config(bad):
    with pytest.raises(ConfigError):
        make_session_config(**bad)
