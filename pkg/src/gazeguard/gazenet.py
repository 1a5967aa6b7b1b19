"""Gaze regression on top of a (possibly frozen) convolutional backbone.

The model is one :class:`LayerGraph`: backbone layers, then a junction that
appends the head pose (yaw, pitch), then a two-layer dense head emitting
(yaw, pitch) in radians.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import NumericalError
from .gradcore import ConcatAux, Conv2D, Dense, Flatten, LayerGraph, MaxPool2D, ReLU, make_optimizer
from .gradcore.checkpoint import digest
from .synthcam import IMAGE_COLS, IMAGE_ROWS, EyeImage, GazeAngles, HeadPose, gaze_to_vector

log = logging.getLogger(__name__)

ARCHS = ("lenet5ish", "tinyconv")
FEATURE_DIM = 128
INPUT_SHAPE = (1, IMAGE_ROWS, IMAGE_COLS)


def build_backbone(arch: str, seed: int = 0, dtype=np.float32) -> LayerGraph:
    rng = np.random.default_rng([seed, 11])
    if arch == "lenet5ish":
        layers = [
            Conv2D(1, 16, 5, rng, dtype), ReLU(), MaxPool2D(),  # 16 x 32 x 56 -> 16 x 16 x 28
            Conv2D(16, 32, 5, rng, dtype), ReLU(), MaxPool2D(),  # 32 x 12 x 24 -> 32 x 6 x 12
            Flatten(), Dense(32 * 6 * 12, FEATURE_DIM, rng, dtype),
        ]
    elif arch == "tinyconv":
        layers = [
            Conv2D(1, 8, 5, rng, dtype), ReLU(), MaxPool2D(), MaxPool2D(),  # 8 x 8 x 14
            Flatten(), Dense(8 * 8 * 14, FEATURE_DIM, rng, dtype),
        ]
    else:
        raise ValueError(f"unknown backbone arch {arch!r}; expected one of {ARCHS}")
    return LayerGraph(layers, INPUT_SHAPE)


@dataclass
class GazeModel:
    graph: LayerGraph
    n_backbone: int  # layers [0, n_backbone) belong to the backbone
    meta: dict = field(default_factory=dict)

    @property
    def backbone_layers(self) -> range:
        return range(self.n_backbone)

    def backbone_digest(self) -> str:
        return digest(self.graph, self.backbone_layers)

    def freeze_backbone(self, frozen: bool = True) -> None:
        self.graph.set_trainable(not frozen, self.backbone_layers)

    def predict(self, pixels: np.ndarray, head: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Batched (yaw, pitch) predictions for ``pixels`` (n, 36, 60) and ``head`` (n, 2)."""
        out = []
        dtype = self.graph.dtype
        for s in range(0, len(pixels), batch_size):
            out.append(self.graph.forward(pixels[s:s + batch_size, None].astype(dtype),
                                          head[s:s + batch_size].astype(dtype)))
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 2))


def build_gaze_model(backbone: LayerGraph, seed: int = 0, hidden: int = 64) -> GazeModel:
    """Attach the head-pose junction and the dense gaze head to ``backbone``."""
    rng = np.random.default_rng([seed, 23])
    dtype = backbone.dtype
    (features,) = backbone.output_shape
    head = [ConcatAux(2), Dense(features + 2, hidden, rng, dtype), ReLU(), Dense(hidden, 2, rng, dtype)]
    graph = LayerGraph(backbone.layers + head, backbone.input_shape)
    return GazeModel(graph, len(backbone.layers))


def split_backbone(model: GazeModel) -> LayerGraph:
    return LayerGraph(model.graph.layers[:model.n_backbone], model.graph.input_shape)


def gaze_forward(model: GazeModel, image: EyeImage | np.ndarray, head: HeadPose) -> GazeAngles:
    pixels = image.pixels if isinstance(image, EyeImage) else np.asarray(image)
    dtype = model.graph.dtype
    out = model.graph.forward(pixels[None, None].astype(dtype),
                              np.array([[head.yaw, head.pitch]], dtype=dtype))
    return GazeAngles(float(out[0, 0]), float(out[0, 1]))


def gaze_l2_loss(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-sample Euclidean distance and its (sub)gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction batch {pred.shape} and truth batch {truth.shape} differ")
    if pred.shape[0] == 0:
        raise ValueError("gaze loss over an empty batch")
    diff = pred - truth
    norms = np.linalg.norm(diff, axis=1)
    n = pred.shape[0]
    safe = np.where(norms > 0, norms, 1.0)
    grad = np.where(norms[:, None] > 0, diff / safe[:, None], 0.0) / n
    return float(norms.mean()), grad


def angular_error_deg(pred: GazeAngles, truth: GazeAngles) -> float:
    cos = float(np.dot(gaze_to_vector(pred), gaze_to_vector(truth)))
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def angular_errors_deg(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Vectorized :func:`angular_error_deg` over (n, 2) arrays of (yaw, pitch)."""
    def vec(a):
        cp = np.cos(a[:, 1])
        return np.stack([np.sin(a[:, 0]) * cp, np.sin(a[:, 1]), -np.cos(a[:, 0]) * cp], axis=1)
    cos = np.clip(np.sum(vec(np.asarray(pred, float)) * vec(np.asarray(truth, float)), axis=1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


@dataclass
class EvalReport:
    mean_angular_error_deg: float
    errors_deg: np.ndarray
    dataset_id: str = ""
    model_id: str = ""


def evaluate(model: GazeModel, pixels: np.ndarray, head: np.ndarray, gaze: np.ndarray,
             dataset_id: str = "", model_id: str = "") -> EvalReport:
    errors = angular_errors_deg(model.predict(pixels, head), gaze)
    return EvalReport(float(errors.mean()), errors, dataset_id, model_id)


class GazeTrainConfig(BaseModel):
    """SGD fine-tuning. Defaults follow the reference protocol (lr 1e-4, no momentum)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(60, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-4, gt=0)
    momentum: float = Field(0.0, ge=0, lt=1)
    weight_decay: float = Field(1e-4, ge=0)
    schedule_factor: float = 0.1
    schedule_period: int = Field(200, ge=0)
    freeze_backbone: bool = True
    seed: int = 0


@dataclass
class FinetuneResult:
    model: GazeModel
    trace: list[tuple[int, float]]


def images_to_arrays(images: list[EyeImage]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pixels = np.stack([im.pixels for im in images])
    head = np.array([[im.head.yaw, im.head.pitch] for im in images])
    gaze = np.array([[im.gaze.yaw, im.gaze.pitch] for im in images])
    return pixels, head, gaze


def finetune(model: GazeModel, images: list[EyeImage] | tuple, config: GazeTrainConfig) -> FinetuneResult:
    """Train the gaze head (and the backbone unless frozen) with the L2 loss.

    ``images`` is a list of :class:`EyeImage` or a ``(pixels, head, gaze)``
    array triple. With a frozen backbone its features are computed once and
    only the head is run per step; the backbone parameters are never touched.
    """
    pixels, head, gaze = images if isinstance(images, tuple) else images_to_arrays(images)
    n = len(pixels)
    if n == 0:
        raise ValueError("fine-tuning needs a nonempty dataset")
    model.freeze_backbone(config.freeze_backbone)
    dtype = model.graph.dtype
    if config.freeze_backbone:
        backbone = split_backbone(model)
        inputs = np.concatenate([backbone.forward(pixels[s:s + 256, None].astype(dtype))
                                 for s in range(0, n, 256)])
        graph = LayerGraph(model.graph.layers[model.n_backbone:], backbone.output_shape)
    else:
        inputs = pixels[:, None].astype(dtype)
        graph = model.graph
    head = head.astype(dtype)
    opt = make_optimizer("sgd", config.lr, config.weight_decay, config.momentum,
                         config.schedule_factor, config.schedule_period)
    rng = np.random.default_rng([config.seed, 31])
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            pred = graph.forward(inputs[idx], head[idx])
            loss, grad = gaze_l2_loss(pred, gaze[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"gaze training diverged at epoch {epoch}; trace so far: {trace}")
            graph.backward(grad.astype(dtype), input_grad=False)
            opt.step(graph.parameters())
            total += loss * len(idx)
        opt.end_epoch()
        trace.append((epoch, total / n))
        log.info("gaze epoch %d loss %.5f lr %.2e", epoch, total / n, opt.lr)
    return FinetuneResult(model, trace)


# -- ablation: random-init vs contrastive-pretrained backbone --------------

@dataclass
class AblationRun:
    arch: str
    variant: str  # "baseline" | "pretrained"
    seed: int
    mean_angular_error_deg: float
    train_trace: list = field(default_factory=list, repr=False)
    pretext_trace: list = field(default_factory=list, repr=False)


@dataclass
class AblationResult:
    runs: list[AblationRun]

    def summary(self) -> list[tuple[str, float, float]]:
        """Per arch: (arch, baseline mean, pretrained mean) over seeds."""
        out = []
        for arch in dict.fromkeys(r.arch for r in self.runs):
            base = [r.mean_angular_error_deg for r in self.runs if r.arch == arch and r.variant == "baseline"]
            ours = [r.mean_angular_error_deg for r in self.runs if r.arch == arch and r.variant == "pretrained"]
            out.append((arch, float(np.mean(base)), float(np.mean(ours))))
        return out

    def csv_rows(self) -> list[tuple]:
        return [(r.arch, r.variant, r.seed, r.mean_angular_error_deg) for r in self.runs]

    def table(self) -> str:
        lines = ["+------------+----------+------------+-----------------+",
                 "|            | Baseline | Pretrained |                 |",
                 "| Network    | error    | error      | delta           |",
                 "+------------+----------+------------+-----------------+"]
        for arch, base, ours in self.summary():
            delta = ours - base
            arrow = "down" if delta < 0 else "up" if delta > 0 else "same"
            cell = f"{delta:+.3f} ({arrow})"
            lines.append(f"| {arch:<10} | {base:8.3f} | {ours:10.3f} | {cell:<15} |")
        lines.append(lines[0])
        lines.append("errors: mean angular error in degrees on the held-out split")
        return "\n".join(lines)


def holdout_split(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, 53]).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def ablation(images: list[EyeImage] | tuple, archs, seeds, pretext_config=None,
             gaze_config: GazeTrainConfig | None = None, test_fraction: float = 0.2,
             split_seed: int = 0, on_run=None) -> AblationResult:
    """Paired runs per (arch, seed): random-init backbone vs pretrained backbone.

    Both variants share the fine-tuning config (including the freeze flag)
    and the train/test split; only the backbone weights differ. Pretraining
    sees the training images without labels.
    """
    from .pretext import PretextConfig, pretrain, projection_head

    archs, seeds = list(archs), list(seeds)
    if not archs or not seeds:
        raise ValueError("ablation needs at least one arch and one seed")
    pretext_config = pretext_config or PretextConfig()
    gaze_config = gaze_config or GazeTrainConfig()
    pixels, head, gaze = images if isinstance(images, tuple) else images_to_arrays(images)
    train, test = holdout_split(len(pixels), test_fraction, split_seed)
    train_data = (pixels[train], head[train], gaze[train])

    runs = []
    for arch in archs:
        for seed in seeds:
            for variant in ("baseline", "pretrained"):
                backbone = build_backbone(arch, seed)
                pre_trace = []
                if variant == "pretrained":
                    cfg = pretext_config.model_copy(update={"seed": seed})
                    pre_trace = pretrain(pixels[train], backbone, projection_head(seed=seed), cfg).trace
                model = build_gaze_model(backbone, seed)
                res = finetune(model, train_data, gaze_config.model_copy(update={"seed": seed}))
                report = evaluate(model, pixels[test], head[test], gaze[test])
                run = AblationRun(arch, variant, seed, report.mean_angular_error_deg, res.trace, pre_trace)
                runs.append(run)
                if on_run is not None:
                    on_run(run)
    return AblationResult(runs)
