"""Sequential layer graph with an optional auxiliary-input junction."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import StateError, StructuralError
from .layers import ConcatAux, Conv2D, Layer


@dataclass
class Parameter:
    key: str
    value: np.ndarray
    grad: np.ndarray


class LayerGraph:
    """An ordered stack of layers.

    ``input_shape`` excludes the batch axis. At most one :class:`ConcatAux`
    junction is allowed; when present, ``forward`` requires ``aux``.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...]) -> None:
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        junctions = [i for i, layer in enumerate(self.layers) if isinstance(layer, ConcatAux)]
        if len(junctions) > 1:
            raise StructuralError(f"at most one auxiliary junction allowed, found {len(junctions)}")
        self.junction = junctions[0] if junctions else None
        self.output_shape = self._check_shapes()
        self._ran_forward = False
        self.aux_grad: np.ndarray | None = None

    def _check_shapes(self) -> tuple[int, ...]:
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except StructuralError as exc:
                raise StructuralError(f"layer {i} ({layer.kind}): {exc}") from None
        return shape

    @property
    def n_aux(self) -> int:
        return 0 if self.junction is None else self.layers[self.junction].n_aux

    def forward(self, x: np.ndarray, aux: np.ndarray | None = None) -> np.ndarray:
        if x.shape[1:] != self.input_shape:
            raise StructuralError(
                f"layer 0 ({self.layers[0].kind}): input shape {x.shape[1:]} "
                f"does not match declared {self.input_shape}")
        if (aux is None) != (self.junction is None):
            raise StructuralError(
                "aux input must be given exactly when the graph has a junction "
                f"(junction={'yes' if self.junction is not None else 'no'})")
        if self.junction is not None:
            self.layers[self.junction].set_aux(aux)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except StructuralError as exc:
                raise StructuralError(f"layer {i} ({layer.kind}): {exc}") from None
        self._ran_forward = True
        return x

    __call__ = forward

    def backward(self, grad_out: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        """Backpropagate ``grad_out``; returns the input gradient.

        Parameter gradients land in each layer's ``grads`` dict and the
        auxiliary-input gradient (if any) in ``self.aux_grad``. With
        ``input_grad=False`` a leading convolution skips its (costly) input
        gradient and ``None`` is returned.
        """
        if not self._ran_forward:
            raise StateError("backward called before forward")
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not input_grad and isinstance(layer, Conv2D):
                return layer.backward(g, need_input_grad=False)
            g = layer.backward(g)
        if self.junction is not None:
            self.aux_grad = self.layers[self.junction].aux_grad
        return g

    def parameters(self, trainable_only: bool = True) -> list[Parameter]:
        out = []
        for i, layer in enumerate(self.layers):
            if trainable_only and not layer.trainable:
                continue
            for name in layer.params:
                out.append(Parameter(f"{i}.{name}", layer.params[name], layer.grads[name]))
        return out

    def set_trainable(self, flag: bool, layers: range | list[int] | None = None) -> None:
        idx = range(len(self.layers)) if layers is None else layers
        for i in idx:
            self.layers[i].trainable = flag

    @property
    def trainable_mask(self) -> list[bool]:
        return [layer.trainable for layer in self.layers]

    def n_parameters(self) -> int:
        return sum(v.size for layer in self.layers for v in layer.params.values())

    def astype(self, dtype) -> LayerGraph:
        """Deep copy with every parameter cast to ``dtype``."""
        clone = copy.deepcopy(self)
        for layer in clone.layers:
            layer.astype(dtype)
            layer._cache = None
        clone._ran_forward = False
        return clone

    def copy(self) -> LayerGraph:
        clone = copy.deepcopy(self)
        for layer in clone.layers:
            layer._cache = None
        clone._ran_forward = False
        return clone

    @property
    def dtype(self):
        for layer in self.layers:
            for v in layer.params.values():
                return v.dtype
        return np.dtype(np.float32)

    def __repr__(self) -> str:
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"LayerGraph(input={self.input_shape}, [{inner}])"


def concat_graphs(first: LayerGraph, second: LayerGraph) -> LayerGraph:
    """Chain two graphs; layer objects are shared, not copied."""
    return LayerGraph(first.layers + second.layers, first.input_shape)
