"""Multiple-model delay estimator.

A bank of N square-root cubature filters runs on the same (u, y) stream;
filter i reads the input through its own fixed delay tau_i.  Bayesian
hypothesis testing turns each filter's innovation into a likelihood,
the hypothesis probabilities are updated recursively, and the delay (and
state) estimate is the probability-weighted blend over the bank.

The N filter updates are executed as one stacked batch, which keeps the
result independent of any notion of worker ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import srckf
from .srckf import AugmentedMapModel, GaussianSqrtBelief

LOG_2PI = math.log(2.0 * math.pi)


class InvalidRange(ValueError):
    """Delay range empty or bank too small."""


class NonPositiveCovariance(ValueError):
    """Innovation covariance must be strictly positive."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Bank configuration; defaults follow the estimator operating point."""

    n_filters: int = 11
    delay_range: tuple[float, float] = (0.0, 100.0)
    ts: float = 5.0
    sqrt_q_diag: tuple[float, ...] = (0.5, 0.01, 1.0, 0.05)
    sqrt_r: float = 1.0
    init_mean: tuple[float, ...] = (0.0, 0.55, 150.0)  # Dmap, K, T; baseline from first sample
    init_sqrt_diag: tuple[float, ...] = (5.0, 0.5, 50.0, 10.0)
    p_min: float = 1e-6


@dataclass
class EstimateRecord:
    """Blended output of one bank step."""

    dmap: float
    k: float
    t: float
    map_b: float
    tau: float
    probs: np.ndarray
    all_zero_likelihoods: bool = False


def likelihood(residual: float, innovation_cov: float, m: int = 1) -> float:
    """Gaussian density of the residual under one hypothesis.

    f = (2 pi)^(-m/2) |R|^(-1/2) exp(-r^T R^-1 r / 2) for scalar R here.
    """
    if innovation_cov <= 0.0:
        raise NonPositiveCovariance(f"innovation covariance {innovation_cov} <= 0")
    quad = residual * residual / innovation_cov
    return math.exp(-0.5 * quad) / math.sqrt((2.0 * math.pi) ** m * innovation_cov)


def _floor_and_normalize(probs: np.ndarray, p_min: float) -> np.ndarray:
    """Project onto the simplex slice {p: sum p = 1, p >= p_min} exactly."""
    p = np.asarray(probs, dtype=float).copy()
    p /= p.sum()
    for _ in range(p.size):
        low = p < p_min
        if not np.any(low):
            break
        p[low] = p_min
        free = ~low
        p[free] *= (1.0 - low.sum() * p_min) / p[free].sum()
    return p


class DelayHypothesisBank:
    """N parallel filters with fixed delay hypotheses and blended outputs."""

    def __init__(self, config: EstimatorConfig, first_measurement: float):
        if config.n_filters < 2:
            raise InvalidRange("need at least 2 hypotheses")
        lo, hi = config.delay_range
        if not hi > lo:
            raise InvalidRange(f"empty delay range ({lo}, {hi})")
        self.config = config
        self.delays = np.linspace(lo, hi, config.n_filters)
        self.lags = np.array([int(round(d / config.ts)) for d in self.delays])
        self.model = AugmentedMapModel(
            ts=config.ts,
            delay_lag=0,
            sqrt_q=np.diag(config.sqrt_q_diag),
            sqrt_r=np.array([[config.sqrt_r]]),
        )
        n = config.n_filters
        mean0 = np.array([*config.init_mean, float(first_measurement)])
        self.beliefs = GaussianSqrtBelief(
            mean=np.tile(mean0, (n, 1)),
            sqrt_cov=np.tile(np.diag(config.init_sqrt_diag), (n, 1, 1)),
        )
        self.probs = np.full(n, 1.0 / n)
        self._u_history: list[float] = []

    @property
    def n_filters(self) -> int:
        return self.config.n_filters

    def _delayed_inputs(self) -> np.ndarray:
        """Input seen by each filter for the pending prediction; the stream is
        zero before the first sample (no drug before the first injection)."""
        k = len(self._u_history) - 1
        out = np.zeros(self.n_filters)
        for i, lag in enumerate(self.lags):
            idx = k - lag
            if idx >= 0:
                out[i] = self._u_history[idx]
        return out

    def step(self, u_prev: float, y: float) -> EstimateRecord:
        """Advance the bank one sample.

        u_prev is the drug rate applied over the interval ending at this
        measurement; y is the pressure sample just taken.
        """
        self._u_history.append(float(u_prev))
        span = max(self.lags) + 1
        if len(self._u_history) > span:
            # ring behaviour: drop samples older than the largest hypothesis lag
            del self._u_history[: len(self._u_history) - span]

        predicted = srckf.time_update(self.beliefs, self.model.process,
                                      self._delayed_inputs(), self.model.sqrt_q)
        corrected, residuals, syy = srckf.measurement_update(
            predicted, self.model.measurement, y, self.model.sqrt_r)
        self.beliefs = corrected

        innov_cov = (syy[..., 0, 0] ** 2).ravel()
        likes = np.array([likelihood(float(r), float(c))
                          for r, c in zip(residuals.ravel(), innov_cov)])
        self.probs, all_zero = self._update_probabilities(likes)

        blended_state = self.probs @ self.beliefs.mean
        return EstimateRecord(
            dmap=float(blended_state[0]),
            k=float(blended_state[1]),
            t=float(blended_state[2]),
            map_b=float(blended_state[3]),
            tau=self.blend_delay(),
            probs=self.probs.copy(),
            all_zero_likelihoods=all_zero,
        )

    def _update_probabilities(self, likes: np.ndarray) -> tuple[np.ndarray, bool]:
        if np.any(~np.isfinite(likes)) or np.any(likes < 0.0):
            raise ValueError("likelihoods must be finite and nonnegative")
        posterior = likes * self.probs
        total = posterior.sum()
        if total <= 0.0:
            # every hypothesis ruled impossible: keep the prior, flag it
            return _floor_and_normalize(self.probs, self.config.p_min), True
        return _floor_and_normalize(posterior / total, self.config.p_min), False

    def blend_delay(self) -> float:
        return float(self.probs @ self.delays)


def update_probabilities(probs: np.ndarray, likes: np.ndarray, p_min: float = 1e-6) -> np.ndarray:
    """Functional form of the hypothesis-probability recursion (floored)."""
    likes = np.asarray(likes, dtype=float)
    if np.any(~np.isfinite(likes)) or np.any(likes < 0.0):
        raise ValueError("likelihoods must be finite and nonnegative")
    posterior = likes * np.asarray(probs, dtype=float)
    total = posterior.sum()
    if total <= 0.0:
        return _floor_and_normalize(np.asarray(probs, dtype=float), p_min)
    return _floor_and_normalize(posterior / total, p_min)


def run_estimation(config: EstimatorConfig, u_seq: np.ndarray, y_seq: np.ndarray) -> list[EstimateRecord]:
    """Feed a whole (u, y) record through a fresh bank.

    u_seq[k] is the rate applied over (t_k, t_{k+1}); the bank is seeded with
    y_seq[0] and stepped on samples 1..end, so the k-th record corresponds to
    the measurement at t_{k+1}.
    """
    u_seq = np.asarray(u_seq, dtype=float)
    y_seq = np.asarray(y_seq, dtype=float)
    if len(y_seq) < 2:
        raise ValueError("need at least two measurements")
    bank = DelayHypothesisBank(config, first_measurement=float(y_seq[0]))
    return [bank.step(float(u_seq[k]), float(y_seq[k + 1])) for k in range(len(y_seq) - 1)]
