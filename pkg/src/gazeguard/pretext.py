"""Self-supervised contrastive pretraining of the eye-image encoder.

Two augmented views of each image form a positive pair; every other view
in the batch is a negative. The loss is the normalized temperature-scaled
cross entropy over cosine similarities, with the positive kept in the
denominator.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from .errors import NumericalError
from .gradcore import Dense, LayerGraph, ReLU, concat_graphs, make_optimizer
from .synthcam import EyeImage

log = logging.getLogger(__name__)


class AugmentationSpec(BaseModel):
    """Ranges for the four augmentation families; a zero range disables a family."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    brightness: float = Field(0.2, ge=0)  # offset drawn from [-b, b]
    contrast: float = Field(0.2, ge=0)  # gain drawn from [1-c, 1+c]
    rotation_deg: float = Field(15.0, ge=0)
    noise_sigma: tuple[float, float] = (0.0, 0.05)
    blur_sigma: tuple[float, float] = (0.5, 1.5)
    use_color: bool = True
    use_rotation: bool = True
    use_noise: bool = True
    use_blur: bool = True

    @classmethod
    def identity(cls) -> AugmentationSpec:
        return cls(brightness=0, contrast=0, rotation_deg=0, noise_sigma=(0, 0), blur_sigma=(0, 0))


def _draw(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def rotate_image(pixels: np.ndarray, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about the image center, counter-clockwise on screen.

    Samples falling outside the frame take the nearest edge value.
    """
    rows, cols = pixels.shape
    cr, cc = (rows - 1) / 2, (cols - 1) / 2
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    r, q = np.mgrid[0:rows, 0:cols].astype(np.float64)
    dr, dc = r - cr, q - cc
    # inverse map: output (dr, dc) samples input rotated by -t
    src_c = cc + c * dc - s * dr
    src_r = cr + s * dc + c * dr
    return ndimage.map_coordinates(pixels, [src_r, src_c], order=1, mode="nearest")


def augment_pixels(pixels: np.ndarray, spec: AugmentationSpec, seed: int) -> np.ndarray:
    """Rotate, then brightness/contrast, then blur, then noise; clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    angle = _draw(rng, -spec.rotation_deg, spec.rotation_deg)
    offset = _draw(rng, -spec.brightness, spec.brightness)
    gain = _draw(rng, 1 - spec.contrast, 1 + spec.contrast)
    blur = _draw(rng, *spec.blur_sigma)
    noise = _draw(rng, *spec.noise_sigma)

    out = pixels
    if spec.use_rotation and angle != 0.0:
        out = rotate_image(out, angle)
    if spec.use_color and (gain != 1.0 or offset != 0.0):
        mean = out.mean()
        out = (out - mean) * gain + mean + offset
    if spec.use_blur and blur > 0:
        out = ndimage.gaussian_filter(out, blur, mode="nearest")
    if spec.use_noise and noise > 0:
        out = out + rng.normal(0.0, noise, out.shape)
    if out is pixels:
        return pixels.copy()
    return np.clip(out, 0.0, 1.0)


def augment(img: EyeImage, spec: AugmentationSpec, seed: int) -> EyeImage:
    return EyeImage(augment_pixels(img.pixels, spec, seed), img.gaze, img.head)


def view_seed(seed: int, image_index: int, view: int) -> int:
    return int(np.random.default_rng([int(seed), int(image_index), view]).integers(2**63))


def make_views(pixels: list[np.ndarray] | np.ndarray, spec: AugmentationSpec, seed: int,
               ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Two augmented views per image.

    Returns ``(views, partner)`` where views ``2k`` and ``2k+1`` come from
    image ``k`` and ``partner[i]`` is the index of view ``i``'s positive.
    ``ids`` (default ``range(N)``) feed the per-view seeds so a given image
    gets the same augmentations wherever it lands in a batch.
    """
    n = len(pixels)
    if n < 1:
        raise ValueError("make_views needs at least one image")
    ids = range(n) if ids is None else ids
    views = np.empty((2 * n,) + np.asarray(pixels[0]).shape)
    for k, (px, ident) in enumerate(zip(pixels, ids)):
        for v in (0, 1):
            views[2 * k + v] = augment_pixels(np.asarray(px, dtype=np.float64), spec, view_seed(seed, ident, v))
    partner = np.arange(2 * n) ^ 1
    return views, partner


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


@dataclass
class ContrastiveBatch:
    z: np.ndarray  # (2N, d) embeddings
    partner: np.ndarray  # (2N,) positive index per view
    temperature: float = 0.5


def nt_xent_loss(batch: ContrastiveBatch) -> tuple[float, np.ndarray]:
    """Mean over all 2N anchors of -log(exp(s_ij/t) / sum_{k != i} exp(s_ik/t)).

    Returns the loss and its gradient with respect to ``batch.z``.
    """
    tau = batch.temperature
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    z = np.asarray(batch.z, dtype=np.float64)
    m = z.shape[0]
    partner = np.asarray(batch.partner)
    if m < 2 or partner.shape != (m,):
        raise ValueError("contrastive batch needs 2N >= 2 views and one partner per view")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero embedding in contrastive batch")
    u = z / norms
    logits = u @ u.T / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - row_max)
    denom = e.sum(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(denom[:, 0])
    rows = np.arange(m)
    loss = float(np.mean(lse - logits[rows, partner]))

    # dL/dlogits = (softmax - onehot(partner)) / m on off-diagonal entries
    g = e / denom
    g[rows, partner] -= 1.0
    g /= m
    gu = (g + g.T) @ u / tau
    gz = (gu - u * np.sum(gu * u, axis=1, keepdims=True)) / norms
    return loss, gz


def projection_head(in_features: int = 128, hidden: int = 64, out: int = 32, seed: int = 0) -> LayerGraph:
    rng = np.random.default_rng([seed, 101])
    return LayerGraph([Dense(in_features, hidden, rng), ReLU(), Dense(hidden, out, rng)], (in_features,))


class PretextConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(30, ge=1)
    batch_size: int = Field(32, ge=2)
    temperature: float = Field(0.5, gt=0)
    optimizer: str = "adam"
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    schedule_factor: float = 0.1
    schedule_period: int = 0
    seed: int = 0
    augmentation: AugmentationSpec = AugmentationSpec()


@dataclass
class PretrainResult:
    backbone: LayerGraph
    head: LayerGraph
    trace: list[tuple[int, float]]


def pretrain(images: list[EyeImage] | np.ndarray, backbone: LayerGraph, head: LayerGraph,
             config: PretextConfig) -> PretrainResult:
    """Minimize the contrastive loss over augmented view pairs.

    ``backbone`` and ``head`` are trained in place. The returned trace has
    one ``(epoch, mean_loss)`` entry per epoch.
    """
    pixels = _as_pixels(images)
    n = len(pixels)
    if n == 0:
        raise ValueError("pretraining needs at least one image")
    if backbone.output_shape != head.input_shape:
        raise ValueError(f"backbone output {backbone.output_shape} does not feed head input {head.input_shape}")
    model = concat_graphs(backbone, head)
    dtype = backbone.dtype
    opt = make_optimizer(config.optimizer, config.lr, config.weight_decay,
                         factor=config.schedule_factor, period=config.schedule_period)
    rng = np.random.default_rng([config.seed, 7])
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            views, partner = make_views(pixels[idx], config.augmentation,
                                        seed=config.seed * 1_000_003 + epoch, ids=idx)
            z = model.forward(views[:, None].astype(dtype))
            loss, gz = nt_xent_loss(ContrastiveBatch(z, partner, config.temperature))
            if not math.isfinite(loss):
                raise NumericalError(f"contrastive loss diverged at epoch {epoch}; trace so far: {trace}")
            model.backward(gz.astype(dtype), input_grad=False)
            opt.step(model.parameters())
            losses.append(loss)
            weights.append(len(idx))
        opt.end_epoch()
        mean_loss = float(np.average(losses, weights=weights))
        trace.append((epoch, mean_loss))
        log.info("pretext epoch %d loss %.4f", epoch, mean_loss)
    return PretrainResult(backbone, head, trace)


def embed(graph: LayerGraph, pixels: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(pixels), batch_size):
        out.append(graph.forward(pixels[start:start + batch_size, None].astype(graph.dtype)))
    return np.concatenate(out)


def _as_pixels(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return images
    return np.stack([img.pixels for img in images])
