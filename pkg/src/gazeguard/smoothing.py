"""Kalman regularization of gaze angle streams.

Each signal gets its own constant-velocity model with a unit frame
interval. :func:`kalman_step` is the online (causal) filter used at
inference time; :func:`rts_smooth` runs the filter forward and a
Rauch-Tung-Striebel pass backward, for offline dataset construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import NumericalError

F = np.array([[1.0, 1.0], [0.0, 1.0]])
H = np.array([1.0, 0.0])
Q_SHAPE = np.array([[0.25, 0.5], [0.5, 1.0]])

DEFAULT_Q = 1e-4
DEFAULT_R = 1e-2
PSD_TOL = 1e-12


class KalmanConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    q: float = Field(DEFAULT_Q, gt=0)
    r: float = Field(DEFAULT_R, gt=0)
    enabled: bool = True


@dataclass
class KalmanChannel:
    x: np.ndarray  # (value, velocity)
    P: np.ndarray  # 2x2 covariance
    q: float
    r: float

    @property
    def value(self) -> float:
        return float(self.x[0])


def _check_noise(q: float, r: float) -> None:
    if not (q > 0 and r > 0):
        raise ValueError(f"noise parameters must be positive, got q={q}, r={r}")


def kalman_init(first_obs: float, q: float = DEFAULT_Q, r: float = DEFAULT_R) -> KalmanChannel:
    _check_noise(q, r)
    return KalmanChannel(np.array([float(first_obs), 0.0]), np.diag([r, 1.0]), q, r)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    # 2x2 PSD test: nonnegative diagonal and determinant
    scale = max(abs(P[0, 0]), abs(P[1, 1]), 1.0)
    if P[0, 0] < -PSD_TOL * scale or P[1, 1] < -PSD_TOL * scale or \
            P[0, 0] * P[1, 1] - P[0, 1] ** 2 < -PSD_TOL * scale * scale:
        raise NumericalError(f"covariance lost positive semidefiniteness: {P.tolist()}")
    return P


def _predict(x: np.ndarray, P: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    return F @ x, F @ P @ F.T + q * Q_SHAPE


def kalman_step(ch: KalmanChannel, obs: float) -> tuple[KalmanChannel, float]:
    """Predict one frame ahead, then fold in ``obs``; returns (new channel, filtered value)."""
    if not np.isfinite(obs):
        raise ValueError(f"observation must be finite, got {obs}")
    x_pred, P_pred = _predict(ch.x, ch.P, ch.q)
    s = P_pred[0, 0] + ch.r
    gain = P_pred[:, 0] / s
    x = x_pred + gain * (obs - x_pred[0])
    # Joseph form keeps the covariance PSD in floating point
    ikh = np.eye(2) - np.outer(gain, H)
    P = ikh @ P_pred @ ikh.T + ch.r * np.outer(gain, gain)
    new = KalmanChannel(x, _symmetrize(P), ch.q, ch.r)
    return new, new.value


def kalman_filter(series, q: float = DEFAULT_Q, r: float = DEFAULT_R):
    """Causal filtering of a whole series; returns (values, means, covariances)."""
    z = np.asarray(series, dtype=float)
    if z.size == 0:
        raise ValueError("cannot filter an empty series")
    ch = kalman_init(z[0], q, r)
    means = np.empty((z.size, 2))
    covs = np.empty((z.size, 2, 2))
    means[0], covs[0] = ch.x, ch.P
    for k in range(1, z.size):
        ch, _ = kalman_step(ch, z[k])
        means[k], covs[k] = ch.x, ch.P
    return means[:, 0].copy(), means, covs


def rts_smooth(series, q: float = DEFAULT_Q, r: float = DEFAULT_R) -> np.ndarray:
    """Fixed-interval smoothing: forward filter, then Rauch-Tung-Striebel backward pass."""
    _check_noise(q, r)
    _, means, covs = kalman_filter(series, q, r)
    xs = means.copy()
    Ps = covs.copy()
    for k in range(len(xs) - 2, -1, -1):
        x_pred, P_pred = _predict(means[k], covs[k], q)
        C = covs[k] @ F.T @ np.linalg.inv(P_pred)
        xs[k] = means[k] + C @ (xs[k + 1] - x_pred)
        Ps[k] = _symmetrize(covs[k] + C @ (Ps[k + 1] - P_pred) @ C.T)
    return xs[:, 0].copy()


class StreamSmoother:
    """Online filter over several independent channels (one per signal)."""

    def __init__(self, n_channels: int, q: float = DEFAULT_Q, r: float = DEFAULT_R) -> None:
        _check_noise(q, r)
        self.q, self.r = q, r
        self.channels: list[KalmanChannel | None] = [None] * n_channels

    def update(self, values) -> np.ndarray:
        out = np.empty(len(self.channels))
        for i, v in enumerate(values):
            ch = self.channels[i]
            if ch is None:
                ch = kalman_init(v, self.q, self.r)
                value = ch.value
            else:
                ch, value = kalman_step(ch, v)
            self.channels[i] = ch
            out[i] = value
        return out
