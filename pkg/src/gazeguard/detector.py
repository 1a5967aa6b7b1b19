"""Normal/abnormal classification from 7-value gaze feature records.

An MLP (3 or 4 dense layers) maps standardized features to two logits and
is trained with softmax cross entropy. :func:`infer_state` turns a record
stream into per-frame decisions plus a debounced stable state.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DataError, NumericalError, StructuralError
from .gazenet import GazeModel
from .gradcore import Dense, LayerGraph, ReLU, log_softmax, make_optimizer, softmax
from .smoothing import KalmanConfig, StreamSmoother, rts_smooth
from .synthcam import FeatureRecord, GazeAngles, HeadPose, SessionFrame

log = logging.getLogger(__name__)

N_FEATURES = 7
ABNORMAL, NORMAL = 0, 1
HIDDEN = {3: (32, 32), 4: (64, 32, 16)}


def build_mlp(depth: int = 3, seed: int = 0, dtype=np.float32) -> LayerGraph:
    if depth not in HIDDEN:
        raise ValueError(f"MLP depth must be 3 or 4, got {depth}")
    rng = np.random.default_rng([seed, 41])
    widths = (N_FEATURES,) + HIDDEN[depth] + (2,)
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        layers += [Dense(a, b, rng, dtype), ReLU()]
    return LayerGraph(layers[:-1], (N_FEATURES,))


@dataclass
class DetectorModel:
    graph: LayerGraph
    mean: np.ndarray
    std: np.ndarray
    depth: int = 3

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (N_FEATURES,) or self.std.shape != (N_FEATURES,):
            raise StructuralError("standardization constants must have 7 entries")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std)) and np.all(self.std > 0)):
            raise DataError("standardization constants must be finite with std > 0")

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise StructuralError(f"detector expects (n, {N_FEATURES}) features, got {x.shape}")
        return (x - self.mean) / self.std

    def logits(self, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        z = self.standardize(x).astype(self.graph.dtype)
        if len(z) == 0:
            return np.zeros((0, 2))
        return np.concatenate([self.graph.forward(z[s:s + batch_size])
                               for s in range(0, len(z), batch_size)]).astype(np.float64)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def metadata(self) -> dict:
        return {"kind": "detector", "depth": self.depth,
                "mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross entropy over the batch and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError(f"cross entropy needs a nonempty (n, C) logit batch, got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError("one label per logit row required")
    n, c = logits.shape
    if np.any((labels < 0) | (labels >= c)):
        raise ValueError(f"labels must lie in [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / n


# -- splits ----------------------------------------------------------------

class SplitSpec(BaseModel):
    """Train/val/test proportions; normalized on construction (default 5:2:1)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    train: float = Field(5.0, gt=0)
    val: float = Field(2.0, gt=0)
    test: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _normalize(self):
        total = self.train + self.val + self.test
        object.__setattr__(self, "train", self.train / total)
        object.__setattr__(self, "val", self.val / total)
        object.__setattr__(self, "test", self.test / total)
        return self


def _hash_unit(seed: int, index: int) -> float:
    h = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") / 2**64


def split_indices(n: int, seed: int, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint (train, val, test) index arrays assigned by a hash of (seed, index)."""
    u = np.array([_hash_unit(seed, i) for i in range(n)])
    train = np.flatnonzero(u < spec.train)
    val = np.flatnonzero((u >= spec.train) & (u < spec.train + spec.val))
    test = np.flatnonzero(u >= spec.train + spec.val)
    return train, val, test


# -- training --------------------------------------------------------------

class DetectorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    depth: int = Field(3, ge=3, le=4)
    epochs: int = Field(40, ge=1)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(1e-2, gt=0)
    schedule_factor: float = 0.1
    schedule_period: int = Field(20, ge=0)
    split: SplitSpec = SplitSpec()
    seed: int = 0


@dataclass
class DetectorMetrics:
    accuracy: float
    confusion: list[list[int]]  # [[tn, fp], [fn, tp]] with "normal" (1) as positive
    precision: dict[str, float]
    recall: dict[str, float]

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion,
                "precision": self.precision, "recall": self.recall}


@dataclass
class TrainResult:
    model: DetectorModel
    trace: list[tuple[int, float, float]]  # (epoch, train_loss, val_accuracy)
    best_epoch: int
    val_metrics: DetectorMetrics
    test_metrics: DetectorMetrics
    split: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def train_detector(x: np.ndarray, y: np.ndarray, config: DetectorConfig = DetectorConfig()) -> TrainResult:
    """Adam + cross entropy; returns the best-validation model and split metrics."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != N_FEATURES:
        raise StructuralError(f"detector expects (n, {N_FEATURES}) features, got {x.shape}")
    train, val, test = split_indices(len(x), config.seed, config.split)
    if len(np.unique(y[train])) < 2:
        raise ValueError("training split must contain both labels")
    if len(val) == 0 or len(test) == 0:
        raise ValueError("dataset too small for a nonempty validation and test split")
    mean, std = standardization(x[train])
    graph = build_mlp(config.depth, config.seed)
    model = DetectorModel(graph, mean, std, config.depth)
    z = model.standardize(x).astype(graph.dtype)
    opt = make_optimizer("adam", config.lr, factor=config.schedule_factor, period=config.schedule_period)
    rng = np.random.default_rng([config.seed, 43])

    best = (-1.0, -1, None)
    trace = []
    for epoch in range(config.epochs):
        order = train[rng.permutation(len(train))]
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grad = cross_entropy_loss(graph.forward(z[idx]), y[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"detector training diverged at epoch {epoch}; trace so far: {trace}")
            graph.backward(grad.astype(graph.dtype))
            opt.step(graph.parameters())
            total += loss * len(idx)
        opt.end_epoch()
        val_acc = float(np.mean(model.predict(x[val]) == y[val]))
        trace.append((epoch, total / len(train), val_acc))
        log.info("detector epoch %d loss %.4f val_acc %.4f", epoch, total / len(train), val_acc)
        if val_acc > best[0]:
            best = (val_acc, epoch, graph.copy())
    model.graph = best[2]
    return TrainResult(model, trace, best[1], evaluate_detector(model, x[val], y[val]),
                       evaluate_detector(model, x[test], y[test]), (train, val, test))


def metrics_from_predictions(pred: np.ndarray, y: np.ndarray) -> DetectorMetrics:
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    conf = np.zeros((2, 2), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    precision, recall = {}, {}
    for c, name in ((ABNORMAL, "abnormal"), (NORMAL, "normal")):
        predicted = conf[:, c].sum()
        actual = conf[c, :].sum()
        precision[name] = float(conf[c, c] / predicted) if predicted else 0.0
        recall[name] = float(conf[c, c] / actual) if actual else 0.0
    return DetectorMetrics(float(np.trace(conf) / len(y)), conf.tolist(), precision, recall)


def evaluate_detector(model: DetectorModel, x: np.ndarray, y: np.ndarray) -> DetectorMetrics:
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return metrics_from_predictions(model.predict(x), y)


# -- streaming inference ---------------------------------------------------

@dataclass(frozen=True)
class StateDecision:
    label: int
    confidence: float  # softmax probability of ``label``
    stable: int  # debounced state

    @property
    def name(self) -> str:
        return "normal" if self.label == NORMAL else "abnormal"


class Debouncer:
    """The stable state only changes after ``k`` consecutive agreeing labels."""

    def __init__(self, k: int = 5) -> None:
        if k < 1:
            raise ValueError("debounce length must be >= 1")
        self.k = k
        self.stable: int | None = None
        self._candidate: int | None = None
        self._run = 0

    def update(self, label: int) -> int:
        if self.stable is None:
            self.stable = label
        if label == self.stable:
            self._candidate, self._run = None, 0
        elif label == self._candidate:
            self._run += 1
        else:
            self._candidate, self._run = label, 1
        if self._candidate is not None and self._run >= self.k:
            self.stable = self._candidate
            self._candidate, self._run = None, 0
        return self.stable


def infer_state(model: DetectorModel, records: Iterable, k: int = 5) -> Iterator[StateDecision]:
    """Per-record argmax decision with softmax confidence and a debounced state.

    ``records`` yields :class:`FeatureRecord` objects or raw 7-value rows.
    """
    deb = Debouncer(k)
    for rec in records:
        row = rec.features() if isinstance(rec, FeatureRecord) else list(rec)
        if len(row) != N_FEATURES:
            raise StructuralError(f"expected {N_FEATURES} features per record, got {len(row)}")
        p = model.predict_proba(np.array([row]))[0]
        label = int(p.argmax())
        yield StateDecision(label, float(p[label]), deb.update(label))


# -- dataset construction from the gaze model ------------------------------

def _session_predictions(gaze_model: GazeModel, frames: list[SessionFrame]) -> tuple[np.ndarray, np.ndarray]:
    left = np.stack([f.left.pixels for f in frames])
    right = np.stack([f.right.pixels for f in frames])
    head = np.array([[f.head.yaw, f.head.pitch] for f in frames])
    return gaze_model.predict(left, head), gaze_model.predict(right, head)


def build_records(gaze_model: GazeModel, kalman: KalmanConfig, sessions: list[list[SessionFrame]],
                  online: bool = False) -> list[FeatureRecord]:
    """Run the gaze model over every frame and assemble feature records.

    The four eye channels are smoothed per session (RTS smoother, or the
    causal filter when ``online``); head pose and distance pass through.
    """
    out = []
    for frames in sessions:
        if not frames:
            continue
        left, right = _session_predictions(gaze_model, frames)
        eyes = np.concatenate([left, right], axis=1)  # (T, 4)
        if kalman.enabled:
            if online:
                sm = StreamSmoother(4, kalman.q, kalman.r)
                eyes = np.stack([sm.update(row) for row in eyes])
            else:
                eyes = np.stack([rts_smooth(eyes[:, c], kalman.q, kalman.r) for c in range(4)], axis=1)
        for f, e in zip(frames, eyes):
            out.append(FeatureRecord(GazeAngles(float(e[0]), float(e[1])), GazeAngles(float(e[2]), float(e[3])),
                                     HeadPose(f.head.yaw, f.head.pitch), float(f.distance_m), int(f.label),
                                     f.geometry))
    return out
