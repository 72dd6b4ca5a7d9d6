"""Stochastic nonlinear patient model.

The pressure deviation follows the first-order delayed response

    T(t) dDmap/dt + Dmap = K(t) u(t - tau(t)),

with the three parameters generated by their own laws, driven by the drug
injection rate i(t):

    sensitivity   a_k dK/dt + K = k0 exp(-k1 i)             (K(0) = k0)
    lag time      T = sat[Tmin, Tmax] ( b_T * integral of i )
    delay         a_t2 tau''' + a_t1 tau'' + tau' = b_t1 di/dt + i   for t >= first injection,
                  tau = 0 before;  the delay in use is sat[tau_min, tau_max](tau).

Coefficients are drawn uniformly from fixed intervals (see COEFFICIENT_RANGES),
one seeded generator per patient, so a trace is a pure function of
(seed, infusion profile, dt).

All ODE states advance with fixed-step RK4.  di/dt is the one-step finite
difference of the held injection value, which turns a step in the profile
into a one-substep pulse.  The delayed input is read from an input history
ring buffer with linear interpolation; the input is zero before t = 0.

The inner loop is deliberately plain Python floats: a 6000 s run at
dt = 0.1 s is ~60k RK4 steps and has to stay fast enough for Monte Carlo
batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .profiles import PiecewiseProfile

COEFFICIENT_RANGES = {
    "a_k": (500.0, 600.0),
    "k0": (0.1, 1.0),
    "k1": (0.002, 0.007),
    "b_t": (1e-4, 3e-4),
    "a_tau1": (5.0, 15.0),
    "a_tau2": (5.0, 15.0),
    "b_tau1": (80.0, 120.0),
}


class HistoryUnderflow(RuntimeError):
    """Requested delayed input is older than the buffered span."""


@dataclass(frozen=True)
class PatientCoefficients:
    a_k: float
    k0: float
    k1: float
    b_t: float
    a_tau1: float
    a_tau2: float
    b_tau1: float
    t_min: float = 30.0
    t_max: float = 300.0
    tau_min: float = 0.0
    tau_max: float = 100.0
    map_baseline: float = 70.0
    seed: int = 0

    def __post_init__(self):
        for name in COEFFICIENT_RANGES:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"coefficient {name} must be positive")
        if not self.t_min < self.t_max:
            raise ValueError("need t_min < t_max")
        if not 0.0 <= self.tau_min < self.tau_max:
            raise ValueError("need 0 <= tau_min < tau_max")


def sample_coefficients(seed: int, **fixed) -> PatientCoefficients:
    """Draw one patient from the coefficient table; deterministic per seed.

    Keyword overrides (t_min, map_baseline, ...) pass through unchanged.
    """
    rng = np.random.default_rng(seed)
    draws = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in COEFFICIENT_RANGES.items()}
    return PatientCoefficients(seed=seed, **draws, **fixed)


@dataclass(frozen=True)
class ParameterOverrides:
    """Freeze selected parameters at constants (estimator/controller studies)."""

    k: float | None = None
    t: float | None = None
    tau: float | None = None


@dataclass
class TruthTrace:
    """Dense (dt-sampled) ground-truth record of one simulation."""

    t: np.ndarray
    u: np.ndarray          # injection rate applied at each substep
    dmap: np.ndarray
    map_true: np.ndarray
    k: np.ndarray
    t_lag: np.ndarray
    tau: np.ndarray

    def sample(self, ts: float) -> "TruthTrace":
        """Subsample at the estimator period (ts must be a multiple of dt)."""
        dt = self.t[1] - self.t[0]
        stride = int(round(ts / dt))
        if abs(stride * dt - ts) > 1e-9:
            raise ValueError(f"ts={ts} is not a multiple of dt={dt}")
        sl = slice(None, None, stride)
        return TruthTrace(self.t[sl], self.u[sl], self.dmap[sl], self.map_true[sl],
                          self.k[sl], self.t_lag[sl], self.tau[sl])


class Patient:
    """Stateful stepper; call step(i) once per dt with the held injection rate."""

    def __init__(self, coeffs: PatientCoefficients, dt: float = 0.1,
                 overrides: ParameterOverrides | None = None,
                 baseline_drift: Callable[[float], float] | None = None,
                 history_span: float | None = None):
        if dt <= 0.0 or dt > 0.5:
            raise ValueError("dt must be in (0, 0.5] s")
        self.coeffs = coeffs
        self.dt = dt
        self.overrides = overrides or ParameterOverrides()
        self.baseline_drift = baseline_drift
        self.time = 0.0
        self.k_state = coeffs.k0
        self.i_integral = 0.0
        self.tau_state = 0.0
        self.tau_rate = 0.0
        self.tau_acc = 0.0
        self.dmap = 0.0
        self.injection_started = False
        self._prev_i = 0.0
        self._history: list[float] = [0.0]  # u at t = 0, then one entry per substep
        self._history_start = 0.0
        self._max_len = None if history_span is None else int(round(history_span / dt)) + 2

    # -- parameter views ------------------------------------------------
    @property
    def k(self) -> float:
        return self.overrides.k if self.overrides.k is not None else self.k_state

    @property
    def t_lag(self) -> float:
        if self.overrides.t is not None:
            return self.overrides.t
        c = self.coeffs
        return min(max(c.b_t * self.i_integral, c.t_min), c.t_max)

    @property
    def tau(self) -> float:
        if self.overrides.tau is not None:
            return self.overrides.tau
        c = self.coeffs
        return min(max(self.tau_state, c.tau_min), c.tau_max)

    @property
    def map_true(self) -> float:
        base = self.coeffs.map_baseline
        if self.baseline_drift is not None:
            base += self.baseline_drift(self.time)
        return base + self.dmap

    # -- delayed-input lookup --------------------------------------------
    def _u_delayed(self, t_query: float, i_now: float) -> float:
        if t_query <= 0.0:
            return 0.0
        last_t = self._history_start + (len(self._history) - 1) * self.dt
        if t_query >= last_t:
            return i_now  # within the current substep: input is the held value
        pos = (t_query - self._history_start) / self.dt
        if pos < 0.0:
            raise HistoryUnderflow(
                f"delay lookup at t={t_query:.2f}s is older than the buffered span")
        idx = int(pos)
        frac = pos - idx
        h = self._history
        return h[idx] * (1.0 - frac) + h[idx + 1] * frac

    def step(self, i_now: float) -> None:
        """Advance one substep with the injection rate held at i_now."""
        c = self.coeffs
        dt = self.dt
        t0 = self.time
        i_now = float(i_now)
        if i_now < 0.0:
            raise ValueError("injection rate must be nonnegative")
        if i_now > 0.0 and not self.injection_started:
            self.injection_started = True
        i_dot = (i_now - self._prev_i) / dt

        started = self.injection_started
        a_k, k0, k1 = c.a_k, c.k0, c.k1
        at1, at2, bt1 = c.a_tau1, c.a_tau2, c.b_tau1
        b_t, t_min, t_max, tau_min, tau_max = c.b_t, c.t_min, c.t_max, c.tau_min, c.tau_max

        k_ov, t_ov, tau_ov = self.overrides.k, self.overrides.t, self.overrides.tau
        ii0 = self.i_integral
        u_delayed = self._u_delayed
        k_target = k0 * math.exp(-k1 * i_now)
        tau_force = bt1 * i_dot + i_now

        # RK4, stages inlined; state order (K, tau, tau', tau'', Dmap)
        kk = self.k_state
        tv, tr, ta = self.tau_state, self.tau_rate, self.tau_acc
        dm = self.dmap

        def stage(kv, tauv, taur, taua, dmv, c_frac):
            dk = (k_target - kv) / a_k
            if started:
                dtaua = (tau_force - taur - at1 * taua) / at2
                dtau, dtaur = taur, taua
            else:
                dtau = dtaur = dtaua = 0.0
            if t_ov is None:
                ts = b_t * (ii0 + c_frac * dt * i_now)
                t_stage = t_min if ts < t_min else (t_max if ts > t_max else ts)
            else:
                t_stage = t_ov
            if tau_ov is None:
                tau_stage = tau_min if tauv < tau_min else (tau_max if tauv > tau_max else tauv)
            else:
                tau_stage = tau_ov
            u_del = u_delayed(t0 + c_frac * dt - tau_stage, i_now)
            ddm = ((k_ov if k_ov is not None else kv) * u_del - dmv) / t_stage
            return dk, dtau, dtaur, dtaua, ddm

        h = 0.5 * dt
        a1, b1v, c1v, d1, e1 = stage(kk, tv, tr, ta, dm, 0.0)
        a2, b2v, c2v, d2, e2 = stage(kk + h * a1, tv + h * b1v, tr + h * c1v, ta + h * d1, dm + h * e1, 0.5)
        a3, b3v, c3v, d3, e3 = stage(kk + h * a2, tv + h * b2v, tr + h * c2v, ta + h * d2, dm + h * e2, 0.5)
        a4, b4v, c4v, d4, e4 = stage(kk + dt * a3, tv + dt * b3v, tr + dt * c3v, ta + dt * d3, dm + dt * e3, 1.0)
        sixth = dt / 6.0
        self.k_state = kk + sixth * (a1 + 2.0 * (a2 + a3) + a4)
        self.tau_state = tv + sixth * (b1v + 2.0 * (b2v + b3v) + b4v)
        self.tau_rate = tr + sixth * (c1v + 2.0 * (c2v + c3v) + c4v)
        self.tau_acc = ta + sixth * (d1 + 2.0 * (d2 + d3) + d4)
        self.dmap = dm + sixth * (e1 + 2.0 * (e2 + e3) + e4)

        self.i_integral = ii0 + dt * i_now
        self.time = t0 + dt
        self._prev_i = i_now
        self._history.append(i_now)
        if self._max_len is not None and len(self._history) > self._max_len:
            drop = len(self._history) - self._max_len
            del self._history[:drop]
            self._history_start += drop * self.dt


def simulate(coeffs: PatientCoefficients, infusion: PiecewiseProfile, duration: float,
             dt: float = 0.1, overrides: ParameterOverrides | None = None,
             baseline_drift: Callable[[float], float] | None = None) -> TruthTrace:
    """Integrate the full model under an open-loop infusion profile."""
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    patient = Patient(coeffs, dt=dt, overrides=overrides, baseline_drift=baseline_drift)
    steps = int(round(duration / dt))
    t = np.empty(steps + 1)
    u = np.empty(steps + 1)
    dmap = np.empty(steps + 1)
    map_true = np.empty(steps + 1)
    k_arr = np.empty(steps + 1)
    t_arr = np.empty(steps + 1)
    tau_arr = np.empty(steps + 1)

    def record(j):
        t[j] = patient.time
        u[j] = infusion.value(patient.time)
        dmap[j] = patient.dmap
        map_true[j] = patient.map_true
        k_arr[j] = patient.k
        t_arr[j] = patient.t_lag
        tau_arr[j] = patient.tau

    record(0)
    for j in range(1, steps + 1):
        patient.step(infusion.value(patient.time))
        record(j)
    return TruthTrace(t=t, u=u, dmap=dmap, map_true=map_true, k=k_arr, t_lag=t_arr, tau=tau_arr)


# -- single-law steppers (the laws above, advanced independently) ---------

def step_sensitivity(k: float, i: float, dt: float, coeffs: PatientCoefficients) -> float:
    """One RK4 step of the sensitivity law under a held injection rate."""
    target = coeffs.k0 * math.exp(-coeffs.k1 * i)
    f = lambda kv: (target - kv) / coeffs.a_k
    k1v = f(k)
    k2v = f(k + 0.5 * dt * k1v)
    k3v = f(k + 0.5 * dt * k2v)
    k4v = f(k + dt * k3v)
    return k + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)


def step_lag(i_integral: float, i: float, dt: float, coeffs: PatientCoefficients) -> tuple[float, float]:
    """Advance the injected-volume integral; returns (integral, saturated T)."""
    if i < 0.0:
        raise ValueError("injection rate must be nonnegative")
    i_integral = i_integral + dt * i
    t = min(max(coeffs.b_t * i_integral, coeffs.t_min), coeffs.t_max)
    return i_integral, t


def step_delay(states: tuple[float, float, float], i: float, i_dot: float, started: bool,
               dt: float, coeffs: PatientCoefficients) -> tuple[tuple[float, float, float], float]:
    """One RK4 step of the third-order delay law.

    states = (tau, dtau/dt, d2tau/dt2); returns (new states, saturated tau).
    Before the first injection the delay is pinned at zero.
    """
    if not started:
        return (0.0, 0.0, 0.0), min(max(0.0, coeffs.tau_min), coeffs.tau_max)
    at1, at2, bt1 = coeffs.a_tau1, coeffs.a_tau2, coeffs.b_tau1

    def f(s):
        return (s[1], s[2], (bt1 * i_dot + i - s[1] - at1 * s[2]) / at2)

    k1v = f(states)
    k2v = f(tuple(states[j] + 0.5 * dt * k1v[j] for j in range(3)))
    k3v = f(tuple(states[j] + 0.5 * dt * k2v[j] for j in range(3)))
    k4v = f(tuple(states[j] + dt * k3v[j] for j in range(3)))
    new = tuple(states[j] + dt / 6.0 * (k1v[j] + 2 * k2v[j] + 2 * k3v[j] + k4v[j]) for j in range(3))
    return new, min(max(new[0], coeffs.tau_min), coeffs.tau_max)
