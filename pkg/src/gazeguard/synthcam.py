"""Synthetic capture sessions: eye images, head poses, gaze angles and labels.

Frame convention: the screen is the plane z = 0 with its center at the
origin, x to the right, y up; the subject sits at z > 0 looking toward -z.
Gaze yaw is positive toward screen-right, pitch positive upward. All angles
(eye and head) live in this screen frame.

Every sample draws from its own generator seeded by ``(seed, stream, index)``
so datasets are identical regardless of how generation is chunked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .errors import ConfigError

HALF_PI = math.pi / 2
IMAGE_ROWS, IMAGE_COLS = 36, 60
EYE_HALF_SPACING_M = 0.032
IRIS_GAIN_X = 22.0  # px per rad of yaw
IRIS_GAIN_Y = 14.0  # px per rad of pitch
EYE_CENTER = (30.0, 18.0)  # (col, row)
SCLERA_AXES = (24.0, 13.0)  # (horizontal, vertical) semi-axes in px
IRIS_RADIUS = 6.0
PUPIL_RADIUS = 2.5
HEAD_SHIFT_GAIN = 4.0  # px of whole-eye shift per rad of head yaw

# RNG stream tags keep independent datasets from sharing random draws.
STREAM_IMAGES = 1
STREAM_FEATURES = 2
STREAM_SESSION = 3


class SessionConfig(BaseModel):
    """Screen/camera geometry and noise model; fully determines a dataset."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    screen_width_m: float = 0.53
    screen_height_m: float = 0.30
    margin_m: float = 0.02
    distance_range_m: tuple[float, float] = (0.45, 0.75)
    yaw_range_rad: tuple[float, float] = (-0.6, 0.6)
    pitch_range_rad: tuple[float, float] = (-0.6, 0.6)
    head_offset_range_m: tuple[float, float] = (-0.03, 0.03)
    label_noise_deg: float = 2.0
    distance_noise_m: float = 0.01
    pixel_noise: float = 0.02
    balanced: bool = True
    seed: int = 0

    @field_validator("screen_width_m", "screen_height_m")
    @classmethod
    def _positive(cls, v):
        if not v > 0:
            raise ValueError("screen dimensions must be > 0")
        return v

    @field_validator("margin_m", "label_noise_deg", "distance_noise_m", "pixel_noise")
    @classmethod
    def _nonnegative(cls, v):
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("seed")
    @classmethod
    def _seed64(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        return v

    @model_validator(mode="after")
    def _ranges(self):
        lo, hi = self.distance_range_m
        if not (lo > 0 and lo <= hi):
            raise ValueError("distance_range_m needs 0 < min <= max")
        for name in ("yaw_range_rad", "pitch_range_rad"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty (min > max)")
            if max(abs(lo), abs(hi)) >= HALF_PI:
                raise ValueError(f"{name} must stay strictly inside (-pi/2, pi/2)")
        lo, hi = self.head_offset_range_m
        if lo > hi:
            raise ValueError("head_offset_range_m is empty (min > max)")
        return self


def make_session_config(**kwargs) -> SessionConfig:
    """Build a :class:`SessionConfig`, converting validation failures to ConfigError."""
    from pydantic import ValidationError

    try:
        return SessionConfig(**kwargs)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class GazeAngles:
    yaw: float
    pitch: float


@dataclass(frozen=True)
class HeadPose:
    yaw: float
    pitch: float


@dataclass(frozen=True)
class ScreenHit:
    x_m: float
    y_m: float


@dataclass
class EyeImage:
    pixels: np.ndarray  # (36, 60) in [0, 1]
    gaze: GazeAngles
    head: HeadPose


@dataclass(frozen=True)
class SampleGeometry:
    """Clean geometry behind a record: head center and midpoint gaze."""

    head_position: tuple[float, float, float]
    gaze: GazeAngles


@dataclass
class FeatureRecord:
    left_eye: GazeAngles
    right_eye: GazeAngles
    head: HeadPose
    distance_m: float
    label: int
    geometry: Optional[SampleGeometry] = field(default=None, compare=False)

    def features(self) -> list[float]:
        return [self.left_eye.yaw, self.left_eye.pitch, self.right_eye.yaw,
                self.right_eye.pitch, self.head.yaw, self.head.pitch, self.distance_m]


FEATURE_NAMES = ["left_yaw", "left_pitch", "right_yaw", "right_pitch", "head_yaw", "head_pitch", "dist"]


def sample_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream, int(index)])


# -- geometry --------------------------------------------------------------

def gaze_to_vector(a: GazeAngles) -> np.ndarray:
    cp = math.cos(a.pitch)
    return np.array([math.sin(a.yaw) * cp, math.sin(a.pitch), -math.cos(a.yaw) * cp])


def vector_to_gaze(v) -> GazeAngles:
    x, y, z = (float(c) for c in v)
    return GazeAngles(math.atan2(x, -z), math.atan2(y, math.hypot(x, z)))


def intersect_screen(eye_pos, gaze: GazeAngles) -> Optional[ScreenHit]:
    """Where the gaze ray from ``eye_pos`` meets the screen plane, or None."""
    p = np.asarray(eye_pos, dtype=float)
    if not p[2] > 0:
        raise ValueError(f"eye position must be in front of the screen (z > 0), got z={p[2]}")
    v = gaze_to_vector(gaze)
    if v[2] >= 0:
        return None
    t = -p[2] / v[2]
    return ScreenHit(float(p[0] + t * v[0]), float(p[1] + t * v[1]))


def label_sample(hit: Optional[ScreenHit], cfg: SessionConfig) -> int:
    """1 (normal) iff the hit lies in the closed screen rectangle grown by the margin."""
    if hit is None:
        return 0
    half_w = cfg.screen_width_m / 2 + cfg.margin_m
    half_h = cfg.screen_height_m / 2 + cfg.margin_m
    return int(abs(hit.x_m) <= half_w and abs(hit.y_m) <= half_h)


def eye_positions(head_position) -> tuple[np.ndarray, np.ndarray]:
    """(left, right) eye centers; the subject's right eye is at +x."""
    h = np.asarray(head_position, dtype=float)
    offset = np.array([EYE_HALF_SPACING_M, 0.0, 0.0])
    return h - offset, h + offset


def angles_toward(eye_pos, target) -> GazeAngles:
    return vector_to_gaze(np.asarray(target, dtype=float) - np.asarray(eye_pos, dtype=float))


def _check_angles(yaw: float, pitch: float, what: str) -> None:
    if not (abs(yaw) < HALF_PI and abs(pitch) < HALF_PI):
        raise ValueError(f"{what} angles must satisfy |yaw|, |pitch| < pi/2, got ({yaw}, {pitch})")


# -- rendering -------------------------------------------------------------

_ROWS, _COLS = np.mgrid[0:IMAGE_ROWS, 0:IMAGE_COLS].astype(np.float64)


def _coverage(signed_dist: np.ndarray) -> np.ndarray:
    """Anti-aliased inside-fraction from a signed distance (negative = inside)."""
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


def iris_center(gaze: GazeAngles, head: HeadPose) -> tuple[float, float]:
    """(col, row) of the iris center in pixels."""
    shift = HEAD_SHIFT_GAIN * head.yaw
    return (EYE_CENTER[0] + shift + IRIS_GAIN_X * gaze.yaw,
            EYE_CENTER[1] - IRIS_GAIN_Y * gaze.pitch)


def render_eye_image(gaze: GazeAngles, head: HeadPose, seed: int, pixel_noise: float = 0.02) -> EyeImage:
    """Draw a 60x36 eye crop: skin, sclera ellipse, iris and pupil, eyelids, noise.

    Head yaw shifts the whole eye sideways a little and head pitch moves
    the eyelids, so head pose leaves a (weak) trace in the image.
    """
    _check_angles(gaze.yaw, gaze.pitch, "gaze")
    _check_angles(head.yaw, head.pitch, "head")
    a, b = SCLERA_AXES
    dx, dy = IRIS_GAIN_X * gaze.yaw, IRIS_GAIN_Y * gaze.pitch
    if (dx / a) ** 2 + (dy / b) ** 2 >= 1.0:
        raise ValueError(f"gaze ({gaze.yaw:.3f}, {gaze.pitch:.3f}) puts the iris outside the sclera")

    cx = EYE_CENTER[0] + HEAD_SHIFT_GAIN * head.yaw
    cy = EYE_CENTER[1]
    ix, iy = iris_center(gaze, head)

    # ellipse signed distance, approximated by scaling the normalized radius
    rn = np.sqrt(((_COLS - cx) / a) ** 2 + ((_ROWS - cy) / b) ** 2)
    sclera = _coverage((rn - 1.0) * b)
    r_iris = np.hypot(_COLS - ix, _ROWS - iy)
    iris = _coverage(r_iris - IRIS_RADIUS) * sclera
    pupil = _coverage(r_iris - PUPIL_RADIUS) * sclera

    img = np.full((IMAGE_ROWS, IMAGE_COLS), 0.6)
    img = img + sclera * (0.9 - img)
    img = img + iris * (0.3 - img)
    img = img + pupil * (0.06 - img)

    upper = cy - 10.5 + 3.0 * head.pitch
    lower = cy + 11.5 + 2.0 * head.pitch
    lid = np.maximum(_coverage(_ROWS - upper), _coverage(lower - _ROWS))
    img = img + lid * (0.5 - img)

    rng = np.random.default_rng(seed)
    if pixel_noise > 0:
        img = img + rng.normal(0.0, pixel_noise, img.shape)
    return EyeImage(np.clip(img, 0.0, 1.0), gaze, head)


# -- datasets --------------------------------------------------------------

def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _noise_rad(cfg: SessionConfig) -> float:
    return math.radians(cfg.label_noise_deg)


def _clip_angle(x: float) -> float:
    limit = HALF_PI - 1e-6
    return min(max(x, -limit), limit)


def generate_image_dataset(cfg: SessionConfig, n: int) -> list[EyeImage]:
    """``n`` rendered eye images; recorded angle labels carry ``label_noise_deg`` jitter."""
    if n <= 0:
        raise ConfigError("image count must be > 0")
    sigma = _noise_rad(cfg)
    out = []
    for i in range(n):
        rng = sample_rng(cfg.seed, STREAM_IMAGES, i)
        gaze = GazeAngles(_uniform(rng, cfg.yaw_range_rad), _uniform(rng, cfg.pitch_range_rad))
        head = HeadPose(_uniform(rng, cfg.yaw_range_rad), _uniform(rng, cfg.pitch_range_rad))
        render_seed = int(rng.integers(2**63))
        img = render_eye_image(gaze, head, render_seed, cfg.pixel_noise)
        if sigma > 0:
            jitter = rng.normal(0.0, sigma, 4)
            img.gaze = GazeAngles(gaze.yaw + jitter[0], gaze.pitch + jitter[1])
            img.head = HeadPose(_clip_angle(head.yaw + jitter[2]), _clip_angle(head.pitch + jitter[3]))
        out.append(img)
    return out


def _sample_geometry(rng: np.random.Generator, cfg: SessionConfig):
    hx = _uniform(rng, cfg.head_offset_range_m)
    hy = _uniform(rng, cfg.head_offset_range_m)
    d = _uniform(rng, cfg.distance_range_m)
    head = HeadPose(_uniform(rng, cfg.yaw_range_rad), _uniform(rng, cfg.pitch_range_rad))
    gaze = GazeAngles(_uniform(rng, cfg.yaw_range_rad), _uniform(rng, cfg.pitch_range_rad))
    return (hx, hy, d), head, gaze


def record_from_geometry(head_position, head: HeadPose, gaze: GazeAngles, cfg: SessionConfig,
                         rng: np.random.Generator | None = None) -> FeatureRecord:
    """Assemble a (possibly noisy) record; the label always uses clean geometry."""
    hit = intersect_screen(head_position, gaze)
    label = label_sample(hit, cfg)
    target = np.array([hit.x_m, hit.y_m, 0.0])
    left_pos, right_pos = eye_positions(head_position)
    left = angles_toward(left_pos, target)
    right = angles_toward(right_pos, target)
    dist = float(head_position[2])
    if rng is not None:
        sigma = _noise_rad(cfg)
        j = rng.normal(0.0, sigma, 6) if sigma > 0 else np.zeros(6)
        left = GazeAngles(_clip_angle(left.yaw + j[0]), _clip_angle(left.pitch + j[1]))
        right = GazeAngles(_clip_angle(right.yaw + j[2]), _clip_angle(right.pitch + j[3]))
        head = HeadPose(_clip_angle(head.yaw + j[4]), _clip_angle(head.pitch + j[5]))
        if cfg.distance_noise_m > 0:
            dist = max(dist + float(rng.normal(0.0, cfg.distance_noise_m)), 1e-3)
    return FeatureRecord(left, right, head, dist, label,
                         SampleGeometry(tuple(float(c) for c in head_position), gaze))


MAX_BALANCE_ATTEMPTS = 1000


def generate_feature_record(cfg: SessionConfig, index: int) -> FeatureRecord:
    rng = sample_rng(cfg.seed, STREAM_FEATURES, index)
    want = index % 2 if cfg.balanced else None
    for _ in range(MAX_BALANCE_ATTEMPTS):
        position, head, gaze = _sample_geometry(rng, cfg)
        hit = intersect_screen(position, gaze)
        if want is None or label_sample(hit, cfg) == want:
            return record_from_geometry(position, head, gaze, cfg, rng)
    raise ConfigError(
        f"balanced sampling could not produce label {want} in {MAX_BALANCE_ATTEMPTS} draws; "
        "widen the angle ranges or disable 'balanced'")


def generate_feature_dataset(cfg: SessionConfig, n: int) -> list[FeatureRecord]:
    """``n`` feature records; with ``cfg.balanced`` even/odd indices are abnormal/normal."""
    if n <= 0:
        raise ConfigError("record count must be > 0")
    return [generate_feature_record(cfg, i) for i in range(n)]


def records_to_arrays(records: list[FeatureRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([r.features() for r in records], dtype=np.float64).reshape(-1, 7)
    y = np.array([r.label for r in records], dtype=np.int64)
    return x, y


# -- sessions --------------------------------------------------------------

@dataclass
class SessionFrame:
    """One video frame: both eye crops plus the measured head pose/distance."""

    index: int
    left: EyeImage
    right: EyeImage
    head: HeadPose  # as measured (noisy)
    distance_m: float  # as measured (noisy)
    label: int  # from clean geometry
    geometry: SampleGeometry


def _ease(a: float, b: float, t: float) -> float:
    return a + (b - a) * t


def generate_session(cfg: SessionConfig, n_frames: int, session_id: int = 0,
                     hold_frames: tuple[int, int] = (15, 45), transition_frames: int = 4) -> list[SessionFrame]:
    """A temporally coherent recording: fixations held for a while, short saccades between.

    Per-eye gaze angles are rendered into the eye crops; head pose and
    distance are reported with measurement noise as a tracker would.
    """
    if n_frames <= 0:
        raise ConfigError("frame count must be > 0")
    rng = sample_rng(cfg.seed, STREAM_SESSION, session_id)
    sigma = _noise_rad(cfg)

    def new_target():
        return _sample_geometry(rng, cfg)

    cur = new_target()
    nxt = new_target()
    hold = int(rng.integers(hold_frames[0], hold_frames[1] + 1))
    age = 0
    frames = []
    for f in range(n_frames):
        if age >= hold + transition_frames:
            cur, nxt = nxt, new_target()
            hold = int(rng.integers(hold_frames[0], hold_frames[1] + 1))
            age = 0
        t = 0.0 if age < hold else (age - hold + 1) / (transition_frames + 1)
        age += 1
        (p0, h0, g0), (p1, h1, g1) = cur, nxt
        position = tuple(_ease(a, b, t) for a, b in zip(p0, p1))
        head = HeadPose(_ease(h0.yaw, h1.yaw, t), _ease(h0.pitch, h1.pitch, t))
        gaze = GazeAngles(_ease(g0.yaw, g1.yaw, t), _ease(g0.pitch, g1.pitch, t))

        clean = record_from_geometry(position, head, gaze, cfg)
        seeds = rng.integers(2**63, size=2)
        left = render_eye_image(clean.left_eye, head, int(seeds[0]), cfg.pixel_noise)
        right = render_eye_image(clean.right_eye, head, int(seeds[1]), cfg.pixel_noise)
        j = rng.normal(0.0, sigma, 2) if sigma > 0 else np.zeros(2)
        measured_head = HeadPose(_clip_angle(head.yaw + j[0]), _clip_angle(head.pitch + j[1]))
        dist = position[2]
        if cfg.distance_noise_m > 0:
            dist = max(dist + float(rng.normal(0.0, cfg.distance_noise_m)), 1e-3)
        frames.append(SessionFrame(f, left, right, measured_head, dist, clean.label, clean.geometry))
    return frames
