"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import LayerGraph


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheckEntry:
    name: str
    checked: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance

    def __str__(self) -> str:
        lines = [f"{e.name:>12}: n={e.checked:<5d} max_rel={e.max_rel_error:.3e}" for e in self.entries]
        return "\n".join(lines)


def _pick(size: int, limit: int | None, rng: np.random.Generator) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (modified in place, then restored)."""
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if indices is None else indices
    out = np.empty(len(idx))
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[n] = (fp - fm) / (2 * h)
    return out


def grad_check(graph: LayerGraph, x: np.ndarray, aux: np.ndarray | None = None,
               h: float = 1e-5, seed: int = 0, max_per_param: int | None = None,
               check_input: bool = True) -> GradCheckReport:
    """Compare backprop against central differences for every parameter.

    The scalar objective is ``sum(R * graph(x))`` for a fixed random
    projection ``R``; this exercises every output coordinate with distinct
    weights. Work happens on a float64 copy of the graph. ``max_per_param``
    samples that many coordinates per tensor (all when ``None``).
    """
    rng = np.random.default_rng(seed)
    g64 = graph.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    aux = None if aux is None else np.array(aux, dtype=np.float64)
    out = g64.forward(x, aux)
    proj = rng.standard_normal(out.shape)

    def objective() -> float:
        return float(np.sum(proj * g64.forward(x, aux)))

    g64.forward(x, aux)
    gx = g64.backward(proj)
    analytic = {p.key: p.grad.copy() for p in g64.parameters(trainable_only=False)}
    aux_grad = None if aux is None else g64.aux_grad.copy()

    report = GradCheckReport()
    for p in g64.parameters(trainable_only=False):
        idx = _pick(p.value.size, max_per_param, rng)
        num = numeric_gradient(objective, p.value, h, idx)
        err = relative_error(analytic[p.key].reshape(-1)[idx], num)
        report.entries.append(GradCheckEntry(p.key, len(idx), float(err.max(initial=0.0))))
    if check_input:
        idx = _pick(x.size, max_per_param, rng)
        num = numeric_gradient(objective, x, h, idx)
        err = relative_error(gx.reshape(-1)[idx], num)
        report.entries.append(GradCheckEntry("input", len(idx), float(err.max(initial=0.0))))
        if aux is not None:
            num = numeric_gradient(objective, aux, h)
            err = relative_error(aux_grad.reshape(-1), num)
            report.entries.append(GradCheckEntry("aux", aux.size, float(err.max(initial=0.0))))
    return report


def check_loss_gradient(loss_fn, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of ``loss_fn(x) -> (loss, grad)`` against central differences."""
    x = np.array(x, dtype=np.float64)
    _, analytic = loss_fn(x)
    num = numeric_gradient(lambda: float(loss_fn(x)[0]), x, h)
    return float(relative_error(np.asarray(analytic).reshape(-1), num).max(initial=0.0))
