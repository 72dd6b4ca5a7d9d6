"""Piecewise signal profiles: infusion schedules, reference targets, disturbances."""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field


@dataclass(frozen=True)
class PiecewiseProfile:
    """Scalar signal defined by knots (times, values).

    interp = "hold": zero-order hold, value jumps at each knot time.
    interp = "linear": linear interpolation between knots, held after the last.
    Before the first knot the profile is `initial`.
    """

    times: tuple[float, ...]
    values: tuple[float, ...]
    interp: str = "hold"
    initial: float = 0.0

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("times and values must be equal-length, nonempty")
        if any(t1 <= t0 for t0, t1 in zip(self.times, self.times[1:])):
            raise ValueError("knot times must be strictly increasing")
        if self.interp not in ("hold", "linear"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def value(self, t: float) -> float:
        idx = bisect_right(self.times, t) - 1
        if idx < 0:
            return self.initial
        if self.interp == "hold" or idx == len(self.times) - 1:
            return self.values[idx]
        t0, t1 = self.times[idx], self.times[idx + 1]
        v0, v1 = self.values[idx], self.values[idx + 1]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def first_active_time(self) -> float | None:
        """First knot time with a nonzero value (None when identically zero)."""
        if self.initial != 0.0:
            return 0.0
        for t, v in zip(self.times, self.values):
            if v != 0.0:
                return t
        return None


@dataclass(frozen=True)
class SumProfile:
    """Pointwise sum of profiles (steps plus ramps compose disturbance shapes)."""

    parts: tuple = field(default_factory=tuple)

    def value(self, t: float) -> float:
        return sum(p.value(t) for p in self.parts)


def constant(v: float) -> PiecewiseProfile:
    return PiecewiseProfile(times=(0.0,), values=(float(v),), interp="hold", initial=float(v))


def step(t0: float, amplitude: float, initial: float = 0.0) -> PiecewiseProfile:
    return PiecewiseProfile(times=(t0,), values=(initial + amplitude,), interp="hold", initial=initial)


def ramp(t0: float, t1: float, v0: float, v1: float, initial: float = 0.0) -> PiecewiseProfile:
    """Linear transition from v0 at t0 to v1 at t1, held afterwards."""
    return PiecewiseProfile(times=(t0, t1), values=(v0, v1), interp="linear", initial=initial)


def zero() -> PiecewiseProfile:
    return constant(0.0)
