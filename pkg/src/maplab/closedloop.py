"""Closed-loop pressure regulation: patient + estimator + controller.

Loop timing: measurements, estimator updates and controller outputs run at
the control period Ts (5 s by default, the resampling rate of the
estimation pipeline); between samples the continuous parts (patient,
actuator filter, controller state, error integrator) advance with RK4 /
Euler substeps at the simulator step dt.

Two controller paths:
  * gain-scheduled delayed output feedback, reconstructed on the fly from a
    synthesis solution at the current (estimated, optionally perturbed,
    box-clamped) scheduling point;
  * a fixed PI baseline u = Kp e + Ki int(e) with conditional anti-windup,
    driving the pump directly.

The measured signal is MAP_true + d_o + noise.  The controller sees
y = [measured - estimated baseline, x_e], mirroring the synthesis model's
measurement rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bank import DelayHypothesisBank, EstimatorConfig
from .patient import ParameterOverrides, Patient, PatientCoefficients
from .profiles import PiecewiseProfile, SumProfile, zero
from .synthesis import SynthesisSolution

PI_KP = 3.0
PI_KI = 0.017
UNSTABLE_DMAP = 500.0


class NoStepSegment(ValueError):
    """Metrics need a step segment inside the trace."""


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop experiment."""

    duration: float
    reference: PiecewiseProfile
    disturbance: object = field(default_factory=zero)  # PiecewiseProfile | SumProfile
    noise_var: float = 1e-3  # per-sample measurement noise variance (mmHg^2)
    seed: int = 0
    ts: float = 5.0
    dt: float = 0.1
    perturb: tuple[float, float, float] = (1.0, 1.0, 1.0)  # controller-side (K, T, tau) factors

    def __post_init__(self):
        if self.duration <= 0.0 or self.ts <= 0.0 or self.dt <= 0.0:
            raise ValueError("duration, ts and dt must be positive")
        if self.noise_var < 0.0:
            raise ValueError("noise variance must be nonnegative")
        steps = self.ts / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("control period must be a multiple of the simulator step")


@dataclass
class SimTrace:
    """Per-control-period record of a closed-loop run."""

    t: np.ndarray
    r: np.ndarray
    map_true: np.ndarray
    map_meas: np.ndarray
    u: np.ndarray
    k_true: np.ndarray
    t_true: np.ndarray
    tau_true: np.ndarray
    k_hat: np.ndarray
    t_hat: np.ndarray
    tau_hat: np.ndarray
    dmap_hat: np.ndarray
    mapb_hat: np.ndarray
    d_o: np.ndarray
    x_e: np.ndarray
    u_cmd: np.ndarray
    mapb_true: np.ndarray
    probs: np.ndarray  # (len, n_filters); zero-width when no estimator ran
    unstable: bool = False


@dataclass
class Metrics:
    overshoot_pct: float
    settling_time: float
    steady_state_error: float
    rise_time: float
    ise: float
    empirical_gain: float

    def as_dict(self) -> dict:
        return {
            "overshoot_pct": self.overshoot_pct,
            "settling_time_s": self.settling_time,
            "steady_state_error_mmhg": self.steady_state_error,
            "rise_time_s": self.rise_time,
            "ise": self.ise,
            "empirical_gain": self.empirical_gain,
        }


class _DelayedStateBuffer:
    """History of the controller state for the delayed-feedback term."""

    def __init__(self, dim: int, dt: float, span: float):
        self.dt = dt
        n = int(round(span / dt)) + 2
        self.data = np.zeros((n, dim))
        self.count = 1  # value at t = 0 is zero

    def append(self, x: np.ndarray) -> None:
        if self.count < self.data.shape[0]:
            self.data[self.count] = x
            self.count += 1
        else:
            self.data[:-1] = self.data[1:]
            self.data[-1] = x

    def lookup(self, delay: float) -> np.ndarray:
        """State `delay` seconds ago, linear interpolation, flat at the ends."""
        pos = (self.count - 1) - delay / self.dt
        if pos <= 0.0:
            return self.data[0]
        if pos >= self.count - 1:
            return self.data[self.count - 1]
        idx = int(pos)
        frac = pos - idx
        return self.data[idx] * (1.0 - frac) + self.data[idx + 1] * frac


def _preallocate(n_periods: int, n_filters: int) -> dict:
    cols = ["t", "r", "map_true", "map_meas", "u", "k_true", "t_true", "tau_true",
            "k_hat", "t_hat", "tau_hat", "dmap_hat", "mapb_hat", "d_o", "x_e", "u_cmd",
            "mapb_true"]
    out = {c: np.zeros(n_periods) for c in cols}
    out["probs"] = np.zeros((n_periods, n_filters))
    return out


def _finish_trace(rec: dict, n: int, unstable: bool) -> SimTrace:
    return SimTrace(**{k: v[:n] for k, v in rec.items()}, unstable=unstable)


def run_lpv_closed_loop(coeffs: PatientCoefficients, solution: SynthesisSolution,
                        est_config: EstimatorConfig, scenario: ScenarioConfig,
                        overrides: ParameterOverrides | None = None,
                        oracle_scheduling: bool = False) -> SimTrace:
    """Gain-scheduled loop; see module docstring for the timing contract."""
    rng = np.random.default_rng(scenario.seed)
    dt, ts = scenario.dt, scenario.ts
    substeps = int(round(ts / dt))
    n_periods = int(round(scenario.duration / ts)) + 1
    patient = Patient(coeffs, dt=dt, overrides=overrides)
    bank: DelayHypothesisBank | None = None
    weights = solution.weights
    box = solution.params

    n_ctrl = 3
    x_k = np.zeros(n_ctrl)
    buffer = _DelayedStateBuffer(n_ctrl, dt, span=float(box.box[2, 1]) + ts)
    x_e = 0.0
    u_act = 0.0  # actuator filter state (pump rate before the >= 0 clamp)
    u_prev_sample = 0.0
    rec = _preallocate(n_periods, est_config.n_filters)
    unstable = False
    perturb = np.asarray(scenario.perturb, dtype=float)

    n_done = 0
    for k in range(n_periods):
        t_k = k * ts
        d_o = scenario.disturbance.value(t_k)
        noise = math.sqrt(scenario.noise_var) * rng.standard_normal() if scenario.noise_var > 0 else 0.0
        y_meas = patient.map_true + d_o + noise
        r_abs = scenario.reference.value(t_k)

        if bank is None:
            bank = DelayHypothesisBank(est_config, first_measurement=y_meas)
            est = None
        else:
            est = bank.step(u_prev_sample, y_meas)

        if oracle_scheduling or est is None:
            k_hat, t_hat, tau_hat = patient.k, patient.t_lag, patient.tau
            dmap_hat, mapb_hat = patient.dmap, patient.map_true - patient.dmap
            probs = bank.probs
        else:
            k_hat, t_hat, tau_hat = est.k, est.t, est.tau
            dmap_hat, mapb_hat = est.dmap, est.map_b
            probs = est.probs

        rho_hat = box.clamp(perturb * np.array([k_hat, t_hat, tau_hat]))
        ctrl = solution.controller_at(rho_hat)
        tau_sched = float(rho_hat[2])

        y_ctrl = np.array([y_meas - mapb_hat, x_e])
        x_k_delayed = buffer.lookup(tau_sched)
        u_cmd = float(ctrl.c_k @ x_k + ctrl.cd_k @ x_k_delayed + ctrl.d_k @ y_ctrl)

        i = k
        rec["t"][i], rec["r"][i] = t_k, r_abs
        rec["map_true"][i], rec["map_meas"][i] = patient.map_true, y_meas
        rec["u"][i] = max(u_act, 0.0)
        rec["k_true"][i], rec["t_true"][i], rec["tau_true"][i] = patient.k, patient.t_lag, patient.tau
        rec["k_hat"][i], rec["t_hat"][i], rec["tau_hat"][i] = k_hat, t_hat, tau_hat
        rec["dmap_hat"][i], rec["mapb_hat"][i] = dmap_hat, mapb_hat
        rec["d_o"][i], rec["x_e"][i], rec["u_cmd"][i] = d_o, x_e, u_cmd
        rec["mapb_true"][i] = patient.map_true - patient.dmap
        rec["probs"][i] = probs
        n_done = k + 1

        if abs(patient.dmap) > UNSTABLE_DMAP:
            unstable = True
            break
        if k == n_periods - 1:
            break

        u_prev_sample = max(u_act, 0.0)
        err_held = r_abs - y_meas
        b_term = ctrl.b_k @ y_ctrl
        lam, omg = weights.lam, weights.omega
        for _ in range(substeps):
            # controller state: RK4 with the delayed term read from history
            xd = buffer.lookup(tau_sched)

            def f(xv):
                return ctrl.a_k @ xv + ctrl.ad_k @ xd + b_term

            k1 = f(x_k)
            k2 = f(x_k + 0.5 * dt * k1)
            k3 = f(x_k + 0.5 * dt * k2)
            k4 = f(x_k + dt * k3)
            x_k = x_k + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            buffer.append(x_k)
            # actuator filter (exact ZOH step of the first-order filter)
            decay = math.exp(-lam * dt)
            u_act = u_act * decay + (omg / lam) * (1.0 - decay) * u_cmd
            x_e += err_held * dt
            patient.step(max(u_act, 0.0))

    return _finish_trace(rec, n_done, unstable)


def run_pi_baseline(coeffs: PatientCoefficients, scenario: ScenarioConfig,
                    kp: float = PI_KP, ki: float = PI_KI,
                    overrides: ParameterOverrides | None = None,
                    est_config: EstimatorConfig | None = None) -> SimTrace:
    """Fixed PI loop; the estimator optionally runs alongside for trace parity."""
    rng = np.random.default_rng(scenario.seed)
    dt, ts = scenario.dt, scenario.ts
    substeps = int(round(ts / dt))
    n_periods = int(round(scenario.duration / ts)) + 1
    patient = Patient(coeffs, dt=dt, overrides=overrides)
    bank: DelayHypothesisBank | None = None
    n_filters = est_config.n_filters if est_config is not None else 0
    rec = _preallocate(n_periods, n_filters)
    x_e = 0.0
    integral = 0.0
    u_held = 0.0
    u_prev_sample = 0.0
    unstable = False

    n_done = 0
    for k in range(n_periods):
        t_k = k * ts
        d_o = scenario.disturbance.value(t_k)
        noise = math.sqrt(scenario.noise_var) * rng.standard_normal() if scenario.noise_var > 0 else 0.0
        y_meas = patient.map_true + d_o + noise
        r_abs = scenario.reference.value(t_k)
        e_k = r_abs - y_meas

        est = None
        if est_config is not None:
            if bank is None:
                bank = DelayHypothesisBank(est_config, first_measurement=y_meas)
            else:
                est = bank.step(u_prev_sample, y_meas)

        u_raw = kp * e_k + ki * integral
        u_held = max(u_raw, 0.0)
        # conditional anti-windup: freeze the integral while the pump is
        # pinned at zero and the error keeps pushing it further down
        if not (u_raw <= 0.0 and e_k < 0.0):
            integral += e_k * ts

        i = k
        rec["t"][i], rec["r"][i] = t_k, r_abs
        rec["map_true"][i], rec["map_meas"][i] = patient.map_true, y_meas
        rec["u"][i] = u_held
        rec["k_true"][i], rec["t_true"][i], rec["tau_true"][i] = patient.k, patient.t_lag, patient.tau
        if est is not None:
            rec["k_hat"][i], rec["t_hat"][i], rec["tau_hat"][i] = est.k, est.t, est.tau
            rec["dmap_hat"][i], rec["mapb_hat"][i] = est.dmap, est.map_b
            rec["probs"][i] = est.probs
        else:
            rec["k_hat"][i] = rec["t_hat"][i] = rec["tau_hat"][i] = math.nan
            rec["dmap_hat"][i] = rec["mapb_hat"][i] = math.nan
            if n_filters:
                rec["probs"][i] = math.nan
        rec["d_o"][i], rec["x_e"][i], rec["u_cmd"][i] = d_o, x_e, u_held
        rec["mapb_true"][i] = patient.map_true - patient.dmap
        n_done = k + 1

        if abs(patient.dmap) > UNSTABLE_DMAP:
            unstable = True
            break
        if k == n_periods - 1:
            break

        u_prev_sample = u_held
        for _ in range(substeps):
            x_e += e_k * dt
            patient.step(u_held)

    return _finish_trace(rec, n_done, unstable)


@dataclass(frozen=True)
class StepSpec:
    """Reference step segment for metric extraction."""

    t_step: float
    magnitude: float
    t_end: float | None = None


def compute_metrics(trace: SimTrace, step: StepSpec,
                    phi: float = 1.0, psi: float = 0.1) -> Metrics:
    """Standard step-response metrics plus the empirical energy gain.

    The gain uses the synthesis performance channels z = [phi x_e, psi u_cmd]
    against w = [r - baseline, d_o] over the whole trace.
    """
    t = trace.t
    t_end = step.t_end if step.t_end is not None else float(t[-1])
    seg = (t >= step.t_step) & (t <= t_end)
    if not np.any(seg) or step.magnitude == 0.0:
        raise NoStepSegment("no samples inside the step segment")
    y = trace.map_meas[seg] - trace.d_o[seg]  # disturbance-free response
    r_target = trace.r[seg][-1]
    mag = abs(step.magnitude)
    sgn = math.copysign(1.0, step.magnitude)
    ts_seg = t[seg] - step.t_step

    excess = sgn * (y - r_target)
    overshoot = max(0.0, float(np.max(excess)) / mag * 100.0)

    band = 0.02 * mag
    outside = np.abs(y - r_target) > band
    settling = float(ts_seg[np.nonzero(outside)[0][-1]] + (ts_seg[1] - ts_seg[0])) if np.any(outside) else 0.0

    base = r_target - step.magnitude
    prog = sgn * (y - base)
    th10, th90 = 0.1 * mag, 0.9 * mag
    i10 = np.nonzero(prog >= th10)[0]
    i90 = np.nonzero(prog >= th90)[0]
    rise = float(ts_seg[i90[0]] - ts_seg[i10[0]]) if len(i10) and len(i90) else math.nan

    tail = seg & (t >= t_end - 0.1 * (t_end - step.t_step))
    sse = abs(float(np.mean(trace.r[tail] - (trace.map_meas[tail] - trace.d_o[tail]))))

    dt_s = float(t[1] - t[0]) if len(t) > 1 else 1.0
    err = trace.r[seg] - trace.map_meas[seg]
    ise = float(np.sum(err**2) * dt_s)

    w_sq = (trace.r - trace.mapb_true) ** 2 + trace.d_o**2
    z_sq = (phi * trace.x_e) ** 2 + (psi * trace.u_cmd) ** 2
    w_energy = float(np.sum(w_sq) * dt_s)
    z_energy = float(np.sum(z_sq) * dt_s)
    gain = math.sqrt(z_energy / w_energy) if w_energy > 0 else math.inf

    return Metrics(overshoot_pct=overshoot, settling_time=settling, steady_state_error=sse,
                   rise_time=rise, ise=ise, empirical_gain=gain)


def run_uncertainty_scenario(coeffs: PatientCoefficients, nominal: SynthesisSolution,
                             robust: SynthesisSolution, est_config: EstimatorConfig,
                             scenario: ScenarioConfig,
                             overrides: ParameterOverrides | None = None) -> tuple[SimTrace, SimTrace]:
    """Run both controller designs under identical seeds and perturbation."""
    trace_nominal = run_lpv_closed_loop(coeffs, nominal, est_config, scenario, overrides)
    trace_robust = run_lpv_closed_loop(coeffs, robust, est_config, scenario, overrides)
    return trace_nominal, trace_robust


def worst_case_perturbation() -> tuple[float, float, float]:
    """Delay and sensitivity under-estimated, lag over-estimated, all by 30%."""
    return (0.7, 1.3, 0.7)
