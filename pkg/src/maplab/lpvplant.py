"""Augmented delayed LPV model of the drug-to-pressure response.

The physical loop is a first-order lag with an input delay,

    T(t) dDmap/dt + Dmap = K(t) u(t - tau(t)),

augmented with a first-order actuator filter u' = -Lambda*u + Omega*u_cmd
and a tracking integrator x_e' = r - (Dmap + d_o).  With the state vector
x_a = [Dmap, u, x_e] the input delay becomes a *state* delay entering only
through the (Dmap, u) coupling, and the scheduling vector is
rho = (K, T, tau).

Performance channel: z = [phi * x_e, psi * u_cmd], disturbance channel
w = [r, d_o].

Measured output: the synthesis model exposes two rows,
y = [Dmap + d_o, x_e].  A single Dmap measurement would leave the tracking
integrator unobservable to the controller, while x_e is trivially
reconstructable at runtime (it is the integral of the known error signal),
so exposing it keeps the output-feedback structure realizable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

N_X = 3  # plant states: Dmap, filtered drug rate, tracking integral
N_W = 2  # disturbances: reference, output disturbance
N_U = 1  # control input: commanded drug rate
N_Z = 2  # performance outputs
N_Y = 2  # measured outputs
N_RHO = 3  # scheduling parameters: K, T, tau


class NonPositiveLag(ValueError):
    """Lag time constant must be strictly positive."""


class InvalidParameterBox(ValueError):
    """Scheduling-parameter box is empty or ill-ordered."""


@dataclass(frozen=True)
class ParameterSet:
    """Admissible scheduling-parameter box with rate bounds.

    box: (3, 2) array of [lo, hi] rows for (K, T, tau).
    rates: per-parameter rate bounds nu_i (units per second).
    mu: bound on the delay rate of change.
    tau_bar: delay upper bound; defaults to the tau axis upper edge.
    """

    box: np.ndarray
    rates: np.ndarray
    mu: float = 0.5
    tau_bar: float | None = None

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(N_RHO, 2)
        rates = np.asarray(self.rates, dtype=float).reshape(N_RHO)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "rates", rates)
        if np.any(box[:, 0] >= box[:, 1]):
            raise InvalidParameterBox(f"need lo < hi on every axis, got {box.tolist()}")
        if np.any(rates < 0.0):
            raise InvalidParameterBox("rate bounds must be nonnegative")
        if self.tau_bar is None:
            object.__setattr__(self, "tau_bar", float(box[2, 1]))
        elif self.tau_bar < box[2, 1]:
            raise InvalidParameterBox("tau_bar must cover the tau axis of the box")

    def contains(self, rho: np.ndarray, tol: float = 1e-9) -> bool:
        rho = np.asarray(rho, dtype=float)
        return bool(np.all(rho >= self.box[:, 0] - tol) and np.all(rho <= self.box[:, 1] + tol))

    def clamp(self, rho: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(rho, dtype=float), self.box[:, 0], self.box[:, 1])


def default_parameter_set() -> ParameterSet:
    """Box spanning the coefficient-table sensitivity range, the lag saturation
    interval and the estimator delay grid, with engineering rate bounds."""
    return ParameterSet(
        box=np.array([[0.1, 1.0], [30.0, 300.0], [0.0, 100.0]]),
        rates=np.array([0.005, 0.05, 0.5]),
        mu=0.5,
    )


@dataclass(frozen=True)
class PlantWeights:
    """Actuator filter constants and performance weights."""

    omega: float = 1.0
    lam: float = 1.0
    phi: float = 1.0
    psi: float = 0.1


@dataclass(frozen=True)
class PlantMatrices:
    """State-space data of the augmented delayed LPV plant at one rho."""

    A: np.ndarray
    Ad: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C1d: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    C2: np.ndarray
    C2d: np.ndarray
    D21: np.ndarray


def augment(rho: np.ndarray, weights: PlantWeights = PlantWeights()) -> PlantMatrices:
    """Augmented plant matrices at a scheduling point rho = (K, T, tau)."""
    k, t, _ = (float(v) for v in np.asarray(rho, dtype=float).reshape(N_RHO))
    if t <= 0.0:
        raise NonPositiveLag(f"lag time constant must be positive, got {t}")
    if weights.omega <= 0.0 or weights.lam <= 0.0:
        raise ValueError("actuator filter constants must be positive")
    a = np.array([
        [-1.0 / t, 0.0, 0.0],
        [0.0, -weights.lam, 0.0],
        [-1.0, 0.0, 0.0],
    ])
    ad = np.zeros((N_X, N_X))
    ad[0, 1] = k / t
    b1 = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, -1.0]])
    b2 = np.array([[0.0], [weights.omega], [0.0]])
    c1 = np.array([[0.0, 0.0, weights.phi], [0.0, 0.0, 0.0]])
    d12 = np.array([[0.0], [weights.psi]])
    c2 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    d21 = np.array([[0.0, 1.0], [0.0, 0.0]])
    return PlantMatrices(
        A=a, Ad=ad, B1=b1, B2=b2,
        C1=c1, C1d=np.zeros((N_Z, N_X)), D11=np.zeros((N_Z, N_W)), D12=d12,
        C2=c2, C2d=np.zeros((N_Y, N_X)), D21=d21,
    )


def grid(params: ParameterSet, counts: tuple[int, int, int]) -> np.ndarray:
    """Cartesian grid over the box, endpoints included; shape (prod(counts), 3)."""
    if any(c < 2 for c in counts):
        raise InvalidParameterBox("need at least 2 grid points per axis")
    axes = [np.linspace(params.box[i, 0], params.box[i, 1], counts[i]) for i in range(N_RHO)]
    return np.array(list(itertools.product(*axes)))


# Polynomial basis for parameter-dependent decision matrices:
#   M(rho) = M_0 + sum_i rho_i M_{i,1} + 1/2 sum_i rho_i^2 M_{i,2}
# Coefficient order: [M_0, M_{1,1}, M_{2,1}, M_{3,1}, M_{1,2}, M_{2,2}, M_{3,2}].
N_TERMS_QUADRATIC = 1 + 2 * N_RHO
N_TERMS_AFFINE = 1 + N_RHO


def basis_weights(rho: np.ndarray, n_terms: int = N_TERMS_QUADRATIC) -> np.ndarray:
    """Scalar weights w_j(rho) such that M(rho) = sum_j w_j coeff_j."""
    rho = np.asarray(rho, dtype=float).reshape(N_RHO)
    w = np.concatenate(([1.0], rho, 0.5 * rho**2))
    return w[:n_terms]


def basis_derivative_weights(rho: np.ndarray, i: int, n_terms: int = N_TERMS_QUADRATIC) -> np.ndarray:
    """Weights of dM/drho_i: picks M_{i,1} + rho_i * M_{i,2}."""
    rho = np.asarray(rho, dtype=float).reshape(N_RHO)
    w = np.zeros(N_TERMS_QUADRATIC)
    w[1 + i] = 1.0
    w[1 + N_RHO + i] = rho[i]
    return w[:n_terms]


@dataclass(frozen=True)
class BasisExpansion:
    """Concrete (numeric) coefficient stack for one decision matrix.

    coeffs has shape (n_terms, rows, cols) with n_terms in {4, 7}.
    """

    coeffs: np.ndarray = field()

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 3 or coeffs.shape[0] not in (N_TERMS_AFFINE, N_TERMS_QUADRATIC):
            raise ValueError(f"expected (4|7, r, c) coefficient stack, got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_terms(self) -> int:
        return self.coeffs.shape[0]

    def eval(self, rho: np.ndarray) -> np.ndarray:
        w = basis_weights(rho, self.n_terms)
        return np.tensordot(w, self.coeffs, axes=1)

    def derivative(self, rho: np.ndarray, i: int) -> np.ndarray:
        w = basis_derivative_weights(rho, i, self.n_terms)
        return np.tensordot(w, self.coeffs, axes=1)


def basis_eval(expansion: BasisExpansion, rho: np.ndarray) -> np.ndarray:
    return expansion.eval(rho)


def partial_derivatives(expansion: BasisExpansion, rho: np.ndarray) -> list[np.ndarray]:
    return [expansion.derivative(rho, i) for i in range(N_RHO)]
