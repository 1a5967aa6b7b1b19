"""The single JSON experiment config with one section per stage."""

from __future__ import annotations

import json
import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .detector import DetectorConfig
from .errors import ConfigError
from .gazenet import ARCHS, GazeTrainConfig
from .pretext import PretextConfig
from .smoothing import KalmanConfig
from .synthcam import SessionConfig

SEED_ENV = "GG_SEED"
SEEDED_SECTIONS = ("session", "pretext", "gaze", "detector")


class GazeStageConfig(GazeTrainConfig):
    arch: str = "lenet5ish"
    # desk-scale defaults; the base class keeps the slower lr 1e-4, no-momentum protocol
    epochs: int = Field(300, ge=1)
    lr: float = Field(1e-2, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)

    @field_validator("arch")
    @classmethod
    def _arch(cls, v):
        if v not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        return v


class PretextStageConfig(PretextConfig):
    epochs: int = Field(5, ge=1)


class AblationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    archs: list[str] = ["lenet5ish", "tinyconv"]
    seeds: list[int] = [0, 1, 2]
    n_images: int = Field(2000, ge=2)
    test_fraction: float = Field(0.2, gt=0, lt=1)


class PipelineConfig(BaseModel):
    """Every stage reads its own section; ``seed`` feeds sections without one."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    artifact_dir: str = "artifacts"
    session: SessionConfig = SessionConfig()
    pretext: PretextStageConfig = PretextStageConfig()
    gaze: GazeStageConfig = GazeStageConfig()
    kalman: KalmanConfig = KalmanConfig()
    detector: DetectorConfig = DetectorConfig()
    ablation: AblationConfig = AblationConfig()


def resolve(raw: dict, env: dict | None = None) -> PipelineConfig:
    """Validate a raw config dict, applying the seed rules.

    Sections without an explicit ``seed`` inherit the top-level one. The
    ``GG_SEED`` environment variable replaces the top-level seed and every
    section seed.
    """
    env = os.environ if env is None else env
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = json.loads(json.dumps(raw))
    override = env.get(SEED_ENV)
    if override is not None:
        try:
            raw["seed"] = int(override)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={override!r} is not an integer") from None
    seed = raw.get("seed", 0)
    for name in SEEDED_SECTIONS:
        section = raw.setdefault(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        if override is not None or "seed" not in section:
            section["seed"] = seed
    try:
        return PipelineConfig(**raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path: str | Path | None, env: dict | None = None) -> PipelineConfig:
    if path is None:
        return resolve({}, env)
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    return resolve(raw, env)


def load_session_config(path: str | Path) -> SessionConfig:
    """A standalone SessionConfig JSON file (unknown keys rejected)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
        return SessionConfig(**raw)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"{path}: invalid session config: {exc}") from None
