"""Reading and writing datasets, sessions and model bundles on disk."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .detector import DetectorModel
from .errors import DataError
from .formats import atomic_write_bytes, csv_text, fmt, parse_float, read_csv, read_pgm, write_json, write_pgm
from .gazenet import GazeModel
from .gradcore import checkpoint
from .gradcore.graph import LayerGraph
from .synthcam import (FEATURE_NAMES, EyeImage, FeatureRecord, GazeAngles, HeadPose, SampleGeometry,
                       SessionFrame)

FEATURE_HEADER = FEATURE_NAMES + ["label"]
IMAGE_INDEX_HEADER = ["file", "yaw", "pitch", "head_yaw", "head_pitch"]
SESSION_HEADER = ["frame", "left_file", "right_file", "head_yaw", "head_pitch", "dist", "label"]
INFERENCE_HEADER = ["frame", "label", "confidence", "stable"]


# -- feature records -------------------------------------------------------

def features_csv(records: list[FeatureRecord]) -> str:
    return csv_text(FEATURE_HEADER, ([*map(float, r.features()), int(r.label)] for r in records))


def write_features(path, records: list[FeatureRecord]) -> None:
    atomic_write_bytes(path, features_csv(records).encode())


def read_features(path) -> tuple[np.ndarray, np.ndarray]:
    rows = read_csv(path, FEATURE_HEADER)
    if not rows:
        raise DataError(f"{path}: no records")
    x = np.array([[parse_float(r, k, path) for k in FEATURE_NAMES] for r in rows])
    y = []
    for r in rows:
        if r["label"] not in ("0", "1"):
            raise DataError(f"{path}: line {r['_line']}: label must be 0 or 1")
        y.append(int(r["label"]))
    if np.any(x[:, 6] <= 0):
        line = rows[int(np.argmax(x[:, 6] <= 0))]["_line"]
        raise DataError(f"{path}: line {line}: distance must be > 0")
    return x, np.array(y, dtype=np.int64)


# -- image datasets --------------------------------------------------------

def write_image_dataset(directory, images: list[EyeImage]) -> Path:
    directory = Path(directory)
    rows = []
    width = max(6, len(str(len(images) - 1)))
    for i, img in enumerate(images):
        name = f"img_{i:0{width}d}.pgm"
        write_pgm(directory / name, img.pixels)
        rows.append([name, float(img.gaze.yaw), float(img.gaze.pitch), float(img.head.yaw), float(img.head.pitch)])
    index = directory / "index.csv"
    atomic_write_bytes(index, csv_text(IMAGE_INDEX_HEADER, rows).encode())
    return index


def read_image_dataset(index) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pixels, head, gaze) arrays from an image index CSV."""
    index = Path(index)
    if index.is_dir():
        index = index / "index.csv"
    rows = read_csv(index, IMAGE_INDEX_HEADER)
    if not rows:
        raise DataError(f"{index}: no images listed")
    pixels = np.stack([read_pgm(index.parent / r["file"]) for r in rows])
    if pixels.shape[1:] != (36, 60):
        raise DataError(f"{index}: images must be 60x36, got {pixels.shape[2]}x{pixels.shape[1]}")
    head = np.array([[parse_float(r, "head_yaw", index), parse_float(r, "head_pitch", index)] for r in rows])
    gaze = np.array([[parse_float(r, "yaw", index), parse_float(r, "pitch", index)] for r in rows])
    return pixels, head, gaze


# -- sessions --------------------------------------------------------------

def write_session(directory, frames: list[SessionFrame]) -> Path:
    directory = Path(directory)
    rows = []
    for f in frames:
        left, right = f"f{f.index:06d}_l.pgm", f"f{f.index:06d}_r.pgm"
        write_pgm(directory / left, f.left.pixels)
        write_pgm(directory / right, f.right.pixels)
        rows.append([f.index, left, right, float(f.head.yaw), float(f.head.pitch), float(f.distance_m), f.label])
    path = directory / "session.csv"
    atomic_write_bytes(path, csv_text(SESSION_HEADER, rows).encode())
    return path


def read_session(path) -> list[SessionFrame]:
    """Frames of a recorded session; label -1 means unlabeled."""
    path = Path(path)
    if path.is_dir():
        path = path / "session.csv"
    rows = read_csv(path, SESSION_HEADER)
    if not rows:
        raise DataError(f"{path}: line 2: session has no frames")
    frames = []
    for r in rows:
        try:
            index = int(r["frame"])
            label = int(r["label"]) if r["label"] != "" else -1
        except ValueError:
            raise DataError(f"{path}: line {r['_line']}: frame and label must be integers") from None
        head = HeadPose(parse_float(r, "head_yaw", path), parse_float(r, "head_pitch", path))
        dist = parse_float(r, "dist", path)
        if dist <= 0:
            raise DataError(f"{path}: line {r['_line']}: dist must be > 0")
        left = read_pgm(path.parent / r["left_file"])
        right = read_pgm(path.parent / r["right_file"])
        if left.shape != (36, 60) or right.shape != (36, 60):
            raise DataError(f"{path}: line {r['_line']}: eye images must be 60x36")
        nan = GazeAngles(float("nan"), float("nan"))
        frames.append(SessionFrame(index, EyeImage(left, nan, head), EyeImage(right, nan, head), head, dist,
                                   label, SampleGeometry((0.0, 0.0, dist), nan)))
    return frames


# -- model bundles (GGCK checkpoint + JSON sidecar) -------------------------

def sidecar_path(ckpt) -> Path:
    return Path(str(ckpt) + ".json")


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_bundle(ckpt, graph: LayerGraph, meta: dict) -> None:
    checkpoint.save(graph, ckpt)
    write_json(sidecar_path(ckpt), meta)


def load_bundle(ckpt, kind: str) -> tuple[LayerGraph, dict]:
    graph = checkpoint.load(ckpt)
    side = sidecar_path(ckpt)
    try:
        meta = json.loads(side.read_text())
    except OSError as exc:
        raise DataError(f"{side}: cannot read model metadata ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{side}: line {exc.lineno}: invalid JSON") from None
    if meta.get("kind") != kind:
        raise DataError(f"{ckpt}: expected a {kind} model, metadata says {meta.get('kind')!r}")
    return graph, meta


def save_gaze_model(ckpt, model: GazeModel) -> None:
    save_bundle(ckpt, model.graph, {"kind": "gaze", "n_backbone": model.n_backbone, **model.meta})


def load_gaze_model(ckpt) -> GazeModel:
    graph, meta = load_bundle(ckpt, "gaze")
    n_backbone = int(meta.pop("n_backbone"))
    meta.pop("kind")
    if graph.junction is None or graph.n_aux != 2 or graph.output_shape != (2,):
        raise DataError(f"{ckpt}: not a gaze model (needs a 2-value head-pose junction and 2 outputs)")
    return GazeModel(graph, n_backbone, meta)


def save_detector(ckpt, model: DetectorModel) -> None:
    save_bundle(ckpt, model.graph, model.metadata())


def load_detector(ckpt) -> DetectorModel:
    graph, meta = load_bundle(ckpt, "detector")
    try:
        return DetectorModel(graph, meta["mean"], meta["std"], int(meta["depth"]))
    except KeyError as exc:
        raise DataError(f"{sidecar_path(ckpt)}: missing key {exc}") from None


def write_trace(path, header, rows) -> None:
    atomic_write_bytes(path, csv_text(header, rows).encode())


def inference_csv(frame_ids, decisions) -> str:
    return csv_text(INFERENCE_HEADER, ([i, d.label, fmt(d.confidence), d.stable] for i, d in zip(frame_ids, decisions)))
