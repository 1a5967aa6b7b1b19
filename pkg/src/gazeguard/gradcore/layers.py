"""Layer vocabulary for the sequential models.

All layers work on numpy arrays with the batch on axis 0. Images are laid
out as ``(batch, channels, rows, cols)``. Every layer caches what it needs
during ``forward`` and raises :class:`StateError` if ``backward`` is called
without a preceding forward pass.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import StateError, StructuralError

KIND_TAGS = {
    "conv2d": 1,
    "maxpool2d": 2,
    "relu": 3,
    "flatten": 4,
    "dense": 5,
    "concat_aux": 6,
    "softmax": 7,
}


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.trainable = True
        self._cache = None

    def config(self) -> list[int]:
        """Integer construction arguments not recoverable from parameter shapes."""
        return []

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def zero_grads(self) -> None:
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)

    def astype(self, dtype) -> None:
        for name in self.params:
            self.params[name] = self.params[name].astype(dtype)
        self.zero_grads()

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


class Conv2D(Layer):
    """Valid (unpadded) stride-1 convolution."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator | None = None, dtype=np.float32) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k2 = kernel * kernel
        self.params["W"] = glorot_uniform(
            rng, (out_channels, in_channels, kernel, kernel),
            in_channels * k2, out_channels * k2, dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grads()

    @property
    def kernel(self) -> int:
        return self.params["W"].shape[2]

    def output_shape(self, input_shape):
        c, h, w = input_shape
        o, ci, k, _ = self.params["W"].shape
        if c != ci or h < k or w < k:
            raise StructuralError(f"conv2d expects ({ci}, >={k}, >={k}) input, got {input_shape}")
        return (o, h - k + 1, w - k + 1)

    def forward(self, x):
        if x.ndim != 4:
            raise StructuralError(f"conv2d expects a 4-d batch, got shape {x.shape}")
        self.output_shape(x.shape[1:])
        o, c, k, _ = self.params["W"].shape
        b, _, h, w = x.shape
        ho, wo = h - k + 1, w - k + 1
        # im2col in (B, Ho, Wo, C, k, k) order so the copy walks memory forward
        xh = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        cols = sliding_window_view(xh, (k, k), axis=(1, 2)).reshape(b * ho * wo, c * k * k)
        y = cols @ self.params["W"].reshape(o, -1).T + self.params["b"]
        self._cache = (cols, x.shape)
        return np.ascontiguousarray(y.reshape(b, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(self, grad_out, need_input_grad: bool = True):
        cols, shape = self._cached()
        w = self.params["W"]
        o, c, k, _ = w.shape
        b, _, h, wd = shape
        ho, wo = h - k + 1, wd - k + 1
        g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
        if self.trainable:
            self.grads["W"] = (g2.T @ cols).reshape(w.shape)
            self.grads["b"] = g2.sum(axis=0)
        else:
            self.zero_grads()
        if not need_input_grad:
            return None
        gcols = (g2 @ w.reshape(o, -1)).reshape(b, ho, wo, c, k, k)
        gx = np.zeros((b, h, wd, c), dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, i:i + ho, j:j + wo, :] += gcols[:, :, :, :, i, j]
        return np.ascontiguousarray(gx.transpose(0, 3, 1, 2))


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2d"

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if h < 2 or w < 2:
            raise StructuralError(f"maxpool2d needs at least 2x2 input, got {input_shape}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        if x.ndim != 4:
            raise StructuralError(f"maxpool2d expects a 4-d batch, got shape {x.shape}")
        self.output_shape(x.shape[1:])
        ho, wo = x.shape[2] // 2, x.shape[3] // 2
        quads = [x[:, :, di:2 * ho:2, dj:2 * wo:2] for di in (0, 1) for dj in (0, 1)]
        y = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
        # route each output to the first window position holding the max
        taken = np.zeros(y.shape, dtype=bool)
        masks = []
        for q in quads:
            m = (q == y) & ~taken
            taken |= m
            masks.append(m)
        self._cache = (x.shape, masks)
        return y

    def backward(self, grad_out):
        shape, masks = self._cached()
        ho, wo = shape[2] // 2, shape[3] // 2
        gx = np.zeros(shape, dtype=grad_out.dtype)
        for (di, dj), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), masks):
            gx[:, :, di:2 * ho:2, dj:2 * wo:2] = grad_out * m
        return gx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        return grad_out * self._cached()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cached())


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (in_features, out_features),
                                          in_features, out_features, dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self.zero_grads()

    def output_shape(self, input_shape):
        n_in, n_out = self.params["W"].shape
        if input_shape != (n_in,):
            raise StructuralError(f"dense expects ({n_in},) features, got {input_shape}")
        return (n_out,)

    def forward(self, x):
        if x.ndim != 2:
            raise StructuralError(f"dense expects a 2-d batch, got shape {x.shape}")
        self.output_shape(x.shape[1:])
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad_out):
        x = self._cached()
        if self.trainable:
            self.grads["W"] = x.T @ grad_out
            self.grads["b"] = grad_out.sum(axis=0)
        else:
            self.zero_grads()
        return grad_out @ self.params["W"].T


class ConcatAux(Layer):
    """Appends an auxiliary input (e.g. head pose) to flat features.

    The graph hands the auxiliary batch over through :meth:`set_aux`; after
    ``backward`` the gradient w.r.t. that input is left in ``aux_grad``.
    """

    kind = "concat_aux"

    def __init__(self, n_aux: int) -> None:
        super().__init__()
        self.n_aux = int(n_aux)
        self._aux = None
        self.aux_grad = None

    def config(self):
        return [self.n_aux]

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise StructuralError(f"concat_aux expects flat features, got {input_shape}")
        return (input_shape[0] + self.n_aux,)

    def set_aux(self, aux: np.ndarray) -> None:
        self._aux = aux

    def forward(self, x):
        aux = self._aux
        if aux is None:
            raise StructuralError("concat_aux: graph has an auxiliary junction but no aux input was given")
        if x.ndim != 2 or aux.ndim != 2 or aux.shape != (x.shape[0], self.n_aux):
            raise StructuralError(
                f"concat_aux expects features (B, F) and aux (B, {self.n_aux}), got {x.shape} and {aux.shape}")
        self._cache = x.shape[1]
        return np.concatenate([x, aux.astype(x.dtype, copy=False)], axis=1)

    def backward(self, grad_out):
        n_feat = self._cached()
        self.aux_grad = grad_out[:, n_feat:]
        return grad_out[:, :n_feat]


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        y = softmax(x)
        self._cache = y
        return y

    def backward(self, grad_out):
        y = self._cached()
        return y * (grad_out - (grad_out * y).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


LAYER_CLASSES = {
    cls.kind: cls for cls in (Conv2D, MaxPool2D, ReLU, Flatten, Dense, ConcatAux, Softmax)
}
