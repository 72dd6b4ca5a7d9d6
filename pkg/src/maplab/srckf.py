"""Square-root cubature Kalman filter on the augmented pressure-response model.

State vector (n = 4): [Dmap, K, T, MAP_b] where Dmap is the pressure
deviation from baseline, K the drug sensitivity, T the lag time constant
and MAP_b the baseline pressure.  The three parameters follow random-walk
dynamics (driven by process noise only); Dmap follows the discretized
first-order response

    x1+ = (1 - Ts/T) * x1 + (Ts * K / T) * u_delayed,
    y   = x1 + MAP_b.

The filter propagates a lower-triangular square root S of the covariance
(P = S S^T) through the third-degree spherical-radial cubature rule, so no
step ever forms a covariance difference explicitly.

All operations accept stacked inputs: a belief with mean shape (..., n)
and sqrt_cov shape (..., n, n) runs the whole leading batch in one call.
The delay-hypothesis bank relies on this to update all filters at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import triangularize

STATE_DIM = 4


class DegenerateLag(ValueError):
    """Lag state at or below the sample period: discretization invalid."""


class SingularInnovation(ValueError):
    """Innovation square root has a (near-)zero diagonal entry."""


@dataclass
class GaussianSqrtBelief:
    """Gaussian belief as mean and lower-triangular covariance square root."""

    mean: np.ndarray
    sqrt_cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.sqrt_cov = np.asarray(self.sqrt_cov, dtype=float)
        n = self.mean.shape[-1]
        if self.sqrt_cov.shape[-2:] != (n, n):
            raise ValueError(f"sqrt_cov shape {self.sqrt_cov.shape} does not match mean dim {n}")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def covariance(self) -> np.ndarray:
        return self.sqrt_cov @ np.swapaxes(self.sqrt_cov, -1, -2)


@dataclass(frozen=True)
class CubatureRule:
    """The 2n third-degree spherical-radial points +-sqrt(n) e_j, equal weights."""

    points: np.ndarray  # (2n, n)
    weights: np.ndarray  # (2n,)


def cubature_points(n: int) -> CubatureRule:
    if n < 1:
        raise ValueError("dimension must be >= 1")
    eye = np.eye(n)
    pts = np.sqrt(n) * np.concatenate([eye, -eye], axis=0)
    return CubatureRule(points=pts, weights=np.full(2 * n, 1.0 / (2 * n)))


def map_process(x: np.ndarray, u_delayed, ts: float, clamp_lag: bool = False) -> np.ndarray:
    """One step of the discretized response model; parameters random-walk.

    With clamp_lag the lag state is floored at 2*Ts before use, which keeps
    cubature points that excurse below the physical range from blowing up
    the propagation.  Without it a lag at or below Ts raises DegenerateLag.
    """
    x = np.asarray(x, dtype=float)
    lag = x[..., 2]
    if clamp_lag:
        lag = np.maximum(lag, 2.0 * ts)
    elif np.any(lag <= ts):
        raise DegenerateLag(f"lag state {np.min(lag)} <= sample period {ts}")
    out = x.copy()
    out[..., 0] = (1.0 - ts / lag) * x[..., 0] + (ts * x[..., 1] / lag) * np.asarray(u_delayed)
    return out


def map_measurement(x: np.ndarray) -> np.ndarray:
    """Measured pressure: deviation plus baseline, shape (..., 1)."""
    x = np.asarray(x, dtype=float)
    return (x[..., 0] + x[..., 3])[..., np.newaxis]


@dataclass(frozen=True)
class AugmentedMapModel:
    """Filter configuration: sample period, fixed delay lag and noise roots."""

    ts: float
    delay_lag: int  # input delay in whole samples
    sqrt_q: np.ndarray  # (4, 4) lower-triangular process noise root
    sqrt_r: np.ndarray  # (1, 1) measurement noise root

    def __post_init__(self):
        if self.ts <= 0.0:
            raise ValueError("sample period must be positive")
        if self.delay_lag < 0:
            raise ValueError("delay lag must be nonnegative")
        object.__setattr__(self, "sqrt_q", np.asarray(self.sqrt_q, dtype=float).reshape(STATE_DIM, STATE_DIM))
        object.__setattr__(self, "sqrt_r", np.asarray(self.sqrt_r, dtype=float).reshape(1, 1))

    def process(self, x: np.ndarray, u_delayed) -> np.ndarray:
        return map_process(x, u_delayed, self.ts, clamp_lag=True)

    def measurement(self, x: np.ndarray) -> np.ndarray:
        return map_measurement(x)


def _spread_points(belief: GaussianSqrtBelief) -> np.ndarray:
    """Cubature points X_i = S xi_i + mean, stacked as (..., 2n, n)."""
    n = belief.dim
    rule = cubature_points(n)
    # (..., 2n, n): each point row is mean + S @ xi_i
    return belief.mean[..., np.newaxis, :] + np.einsum("...ij,kj->...ki", belief.sqrt_cov, rule.points)


def time_update(
    belief: GaussianSqrtBelief,
    process: Callable[[np.ndarray, object], np.ndarray],
    u,
    sqrt_q: np.ndarray,
) -> GaussianSqrtBelief:
    """Prediction: propagate cubature points and re-triangularize the root."""
    n = belief.dim
    pts = _spread_points(belief)
    prop = process(pts, np.asarray(u)[..., np.newaxis] if np.ndim(u) else u)
    mean = np.mean(prop, axis=-2)
    centered = (prop - mean[..., np.newaxis, :]) / np.sqrt(2 * n)
    stacked = np.concatenate([np.swapaxes(centered, -1, -2),
                              np.broadcast_to(sqrt_q, (*centered.shape[:-2], n, n))], axis=-1)
    return GaussianSqrtBelief(mean=mean, sqrt_cov=triangularize(stacked))


def measurement_update(
    belief: GaussianSqrtBelief,
    measurement: Callable[[np.ndarray], np.ndarray],
    y,
    sqrt_r: np.ndarray,
    diag_floor: float = 1e-12,
) -> tuple[GaussianSqrtBelief, np.ndarray, np.ndarray]:
    """Correction step.

    Returns (corrected belief, residual y - y_hat, innovation sqrt S_yy);
    the residual and S_yy feed the hypothesis-testing layer.
    """
    n = belief.dim
    pts = _spread_points(belief)
    ymeas = measurement(pts)  # (..., 2n, ny)
    ny = ymeas.shape[-1]
    yhat = np.mean(ymeas, axis=-2)
    ydev = (ymeas - yhat[..., np.newaxis, :]) / np.sqrt(2 * n)  # (..., 2n, ny)
    xdev = (pts - belief.mean[..., np.newaxis, :]) / np.sqrt(2 * n)  # (..., 2n, n)

    ydev_t = np.swapaxes(ydev, -1, -2)  # (..., ny, 2n)
    syy = triangularize(np.concatenate(
        [ydev_t, np.broadcast_to(sqrt_r, (*ydev_t.shape[:-2], ny, ny))], axis=-1))
    if np.any(np.abs(np.diagonal(syy, axis1=-2, axis2=-1)) < diag_floor):
        raise SingularInnovation("innovation square root is numerically singular")

    pxy = np.swapaxes(xdev, -1, -2) @ ydev  # (..., n, ny)
    # W = Pxy Syy^-T Syy^-1, i.e. W^T = Syy^-T (Syy^-1 Pxy^T)
    syy_t = np.swapaxes(syy, -1, -2)
    gain = np.linalg.solve(syy, np.swapaxes(pxy, -1, -2))
    gain = np.linalg.solve(syy_t, gain)
    gain = np.swapaxes(gain, -1, -2)  # (..., n, ny)

    residual = np.asarray(y, dtype=float) - yhat
    mean = belief.mean + (gain @ residual[..., np.newaxis])[..., 0]
    chi = np.swapaxes(xdev, -1, -2)  # (..., n, 2n)
    stacked = np.concatenate([chi - gain @ ydev_t,
                              gain @ np.broadcast_to(sqrt_r, (*gain.shape[:-2], ny, ny))], axis=-1)
    return GaussianSqrtBelief(mean=mean, sqrt_cov=triangularize(stacked)), residual, syy


def default_sqrt_q() -> np.ndarray:
    """Per-step random-walk noise roots spanning the observed parameter drift
    rates at a 5 s period: [Dmap, K, T, MAP_b]."""
    return np.diag([0.5, 0.01, 1.0, 0.05])


def default_sqrt_r() -> np.ndarray:
    return np.array([[1.0]])


def default_initial_belief(first_measurement: float) -> GaussianSqrtBelief:
    """Prior centered on the nominal operating point with the baseline seeded
    from the first pressure sample."""
    return GaussianSqrtBelief(
        mean=np.array([0.0, 0.55, 150.0, float(first_measurement)]),
        sqrt_cov=np.diag([5.0, 0.5, 50.0, 10.0]),
    )
