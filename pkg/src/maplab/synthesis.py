"""Delay-dependent gain-scheduled output-feedback synthesis.

Solves, over a finite grid of scheduling points rho = (K, T, tau), the
parameter-dependent matrix-inequality conditions that certify closed-loop
stability and an induced L2 gain bound gamma for the augmented delayed
plant, then recovers the scheduled controller matrices by factorization
and back-substitution.

Decision variables (polynomial expansions in a normalized scheduling
coordinate): P (2n x 2n) and X, Y (n x n) with affine+quadratic terms,
hat-matrices Ahat, Adhat, Bhat, Chat, Cdhat, Dk with affine terms,
constant Q, R (2n x 2n), and the scalar gain bound gamma.  The
per-parameter rate bounds enter through +-nu_i dP/drho_i terms enumerated
over all 2^s sign patterns per grid point.

Fixed scalars: lambda2/lambda3 multiply decision blocks (the joint problem
is bilinear in them) and are swept externally if desired; the uncertainty
multiplier eps of the robust variant is fixed for the same reason (it
multiplies Y-dependent blocks in the perturbation columns).

Numerical conditioning.  The raw problem mixes second-scale delays with
1/T-scale dynamics and is near-unsolvable as posed, so synthesis happens
in internally scaled coordinates: time is rescaled by the delay bound, the
integrator state is rescaled to match, the basis coordinate for the lag
axis is the reciprocal 1/T (the plant is affine in it), and every basis
coordinate is normalized to [0, 1].  The stored solution keeps the scaled
expansions plus the scaling record; `controller_at` evaluates,
reconstructs and converts back to physical units.

Pipeline: one gamma-minimization pins the achievable gain; a margin
maximization at a backed-off gamma re-centers the solution strictly inside
the feasible set (with a mild penalty on quadratic basis terms to limit
between-grid-point oscillation); numeric verification on a denser grid
closes the gridding gap, feeding violating points back as extra
constraints when needed.  All conic solves build their cone program
directly (see `sdp`) by probing the affine LMI maps once per grid point.
"""

from __future__ import annotations

import copy
import itertools
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import sparse

from .sdp import ConeProgram, svec, svec_rows
from .linalg import max_eigenvalue, min_eigenvalue
from .lpvplant import (
    N_RHO,
    N_TERMS_AFFINE,
    N_TERMS_QUADRATIC,
    ParameterSet,
    PlantMatrices,
    PlantWeights,
    augment,
    basis_derivative_weights,
    basis_weights,
    grid,
)

N_X = 3
N_BAR = 2 * N_X
N_W = 2
N_Z = 2
N_Y = 2
N_U = 1
LMI_DIM_NOMINAL = 3 * N_BAR + N_W + N_Z + N_BAR  # 28


class Infeasible(RuntimeError):
    """No gamma below the cap satisfies the constraint system."""


class SolverFailure(RuntimeError):
    """The conic backend failed to return a usable status."""


class NearSingularFactorization(RuntimeError):
    """I - X Y is numerically singular; controller cannot be recovered."""


@dataclass(frozen=True)
class SynthesisOptions:
    """Tuning knobs of the synthesis pipeline."""

    lambda2: float = 4.0
    lambda3: float = 0.25
    eps: float = 1.0
    grid_counts: tuple[int, int, int] = (3, 3, 3)
    delta: float = 1e-7
    gamma_cap: float = 1e5
    gamma_backoff: float = 1.5
    margin_cap: float = 10.0
    quad_reg: float = 0.0
    pxy_quadratic: bool = True  # quadratic basis for P, X, Y (affine otherwise)
    refine_rounds: int = 2
    refine_max_points: int = 12
    anchor_midpoints: bool = True  # constrain the lag-axis midpoint slab too
    tol_gap_rel: float = 3e-3
    polish_tol_rel: float = 1e-2
    tol_feas: float = 1e-8


@dataclass(frozen=True)
class UncertaintyModel:
    """Norm-bounded perturbation structure dA = H Delta E1, dAd = H Delta E2."""

    h: np.ndarray  # (n, i)
    e1: np.ndarray  # (j, n)
    e2: np.ndarray  # (j, n)

    def __post_init__(self):
        object.__setattr__(self, "h", np.atleast_2d(np.asarray(self.h, dtype=float)))
        object.__setattr__(self, "e1", np.atleast_2d(np.asarray(self.e1, dtype=float)))
        object.__setattr__(self, "e2", np.atleast_2d(np.asarray(self.e2, dtype=float)))
        if self.h.shape[0] != N_X or self.e1.shape[1] != N_X or self.e2.shape[1] != N_X:
            raise ValueError("uncertainty matrices must act on the 3-dim plant state")
        if self.e1.shape[0] != self.e2.shape[0]:
            raise ValueError("E1 and E2 must have the same row count")


def default_uncertainty(params: ParameterSet, scale: float = 0.3) -> UncertaintyModel:
    """30% relative perturbation of the lag pole and the delayed-gain entry,
    expressed as constant matrices covering the whole box."""
    t_lo = params.box[1, 0]
    k_hi = params.box[0, 1]
    e1 = np.zeros((1, N_X))
    e1[0, 0] = scale * (1.0 / t_lo)
    e2 = np.zeros((1, N_X))
    e2[0, 1] = scale * (k_hi / t_lo)
    h = np.zeros((N_X, 1))
    h[0, 0] = 1.0
    return UncertaintyModel(h=h, e1=e1, e2=e2)


# ---------------------------------------------------------------------------
# internal scaling and basis coordinates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingSpec:
    """Internal synthesis coordinates (recorded in the solution)."""

    time_scale: float               # t' = t / time_scale
    state_scale: tuple[float, ...]  # x = diag(state_scale) x'
    box: np.ndarray                 # physical parameter box (3, 2)

    def coord(self, rho: np.ndarray) -> np.ndarray:
        """Normalized basis coordinate: (K, 1/T, tau) mapped onto [0, 1]^3."""
        rho = np.asarray(rho, dtype=float).reshape(N_RHO)
        k_lo, k_hi = self.box[0]
        t_lo, t_hi = self.box[1]
        tau_lo, tau_hi = self.box[2]
        eta_lo, eta_hi = 1.0 / t_hi, 1.0 / t_lo
        return np.array([
            (rho[0] - k_lo) / (k_hi - k_lo),
            (1.0 / rho[1] - eta_lo) / (eta_hi - eta_lo),
            (rho[2] - tau_lo) / (tau_hi - tau_lo),
        ])

    def coord_jacobian(self, rho: np.ndarray) -> np.ndarray:
        """d(coord_i)/d(rho_i): the basis chain-rule factors."""
        rho = np.asarray(rho, dtype=float).reshape(N_RHO)
        k_lo, k_hi = self.box[0]
        t_lo, t_hi = self.box[1]
        tau_lo, tau_hi = self.box[2]
        eta_lo, eta_hi = 1.0 / t_hi, 1.0 / t_lo
        return np.array([
            1.0 / (k_hi - k_lo),
            -1.0 / (rho[1] ** 2 * (eta_hi - eta_lo)),
            1.0 / (tau_hi - tau_lo),
        ])

    def scale_plant(self, pm: PlantMatrices) -> PlantMatrices:
        d = np.diag(self.state_scale)
        di = np.diag(1.0 / np.asarray(self.state_scale))
        s = self.time_scale
        return PlantMatrices(
            A=s * di @ pm.A @ d, Ad=s * di @ pm.Ad @ d,
            B1=s * di @ pm.B1, B2=s * di @ pm.B2,
            C1=pm.C1 @ d, C1d=pm.C1d @ d, D11=pm.D11, D12=pm.D12,
            C2=pm.C2 @ d, C2d=pm.C2d @ d, D21=pm.D21,
        )

    def scale_uncertainty(self, unc: UncertaintyModel) -> UncertaintyModel:
        d = np.diag(self.state_scale)
        di = np.diag(1.0 / np.asarray(self.state_scale))
        h = self.time_scale * di @ unc.h
        e1 = unc.e1 @ d
        e2 = unc.e2 @ d
        # H Delta E is invariant under (H/c, c E); balancing the norms keeps
        # the uncertainty columns of the robust inequality well conditioned
        h_norm = np.linalg.norm(h)
        e_norm = np.linalg.norm(np.vstack([e1, e2]))
        if h_norm > 0.0 and e_norm > 0.0:
            c = np.sqrt(h_norm / e_norm)
            h, e1, e2 = h / c, c * e1, c * e2
        return UncertaintyModel(h=h, e1=e1, e2=e2)


def make_scaling(params: ParameterSet) -> ScalingSpec:
    s_t = float(params.tau_bar)
    return ScalingSpec(time_scale=s_t, state_scale=(1.0, 1.0, s_t), box=params.box.copy())


# ---------------------------------------------------------------------------
# LMI assembly (plain numpy; the solver path probes these maps)
# ---------------------------------------------------------------------------

@dataclass
class PointVars:
    """Decision-variable values evaluated at one scheduling point."""

    p: np.ndarray
    x: np.ndarray
    y: np.ndarray
    a_hat: np.ndarray
    ad_hat: np.ndarray
    b_hat: np.ndarray
    c_hat: np.ndarray
    cd_hat: np.ndarray
    d_k: np.ndarray
    q: np.ndarray
    r: np.ndarray
    dp: list  # dP/drho_i (physical-parameter derivative), i = 0..2
    gamma: float
    eps: float = 1.0


def assemble_nominal_lmi(plant: PlantMatrices, pv: PointVars, signs, rates,
                         tau_bar: float, options: SynthesisOptions,
                         dtau_drho3: float = 1.0) -> np.ndarray:
    """The six-block-row synthesis inequality at one grid point / sign pattern.

    `rates` are the scheduling rate bounds nu_i in the same time unit as
    `plant`; `signs` is the +-1 pattern applied coherently to the rate
    terms.  The delay is itself the third scheduling parameter, so the
    delayed-energy block sees signs[2] * rates[2] * dtau_drho3 (= nu3 in
    physical coordinates).
    """
    lam2, lam3 = options.lambda2, options.lambda3
    a, ad, b1, b2 = plant.A, plant.Ad, plant.B1, plant.B2
    c1, c1d, d11, d12 = plant.C1, plant.C1d, plant.D11, plant.D12
    c2, c2d, d21 = plant.C2, plant.C2d, plant.D21
    eye_n = np.eye(N_X)

    v = np.block([[pv.y, eye_n], [eye_n, pv.x]])
    a_cal = np.block([[a @ pv.y + b2 @ pv.c_hat, a + b2 @ pv.d_k @ c2],
                      [pv.a_hat, pv.x @ a + pv.b_hat @ c2]])
    ad_cal = np.block([[ad @ pv.y + b2 @ pv.cd_hat, ad + b2 @ pv.d_k @ c2d],
                       [pv.ad_hat, pv.x @ ad + pv.b_hat @ c2d]])
    b_cal = np.block([[b1 + b2 @ pv.d_k @ d21], [pv.x @ b1 + pv.b_hat @ d21]])
    c_cal = np.block([[c1 @ pv.y + d12 @ pv.c_hat, c1 + d12 @ pv.d_k @ c2]])
    cd_cal = np.block([[c1d @ pv.y + d12 @ pv.cd_hat, c1d + d12 @ pv.d_k @ c2d]])
    d_cal = d11 + d12 @ pv.d_k @ d21

    psi22 = sum(signs[i] * rates[i] * pv.dp[i] for i in range(N_RHO)) + pv.q - pv.r
    xi22 = -(1.0 - signs[2] * rates[2] * dtau_drho3) * pv.q - pv.r

    z = np.zeros
    g = pv.gamma
    rows = [
        [-2.0 * v, pv.p - lam2 * v + a_cal, -lam3 * v + ad_cal, b_cal, z((N_BAR, N_Z)), v + tau_bar * pv.r],
        [None, psi22 + lam2 * (a_cal + a_cal.T), pv.r + lam3 * a_cal.T + lam2 * ad_cal,
         lam2 * b_cal, c_cal.T, lam2 * v - pv.p],
        [None, None, xi22 + lam3 * (ad_cal + ad_cal.T), lam3 * b_cal, cd_cal.T, lam3 * v],
        [None, None, None, -g * np.eye(N_W), d_cal.T, z((N_W, N_BAR))],
        [None, None, None, None, -g * np.eye(N_Z), z((N_Z, N_BAR))],
        [None, None, None, None, None, (-1.0 - 2.0 * tau_bar) * pv.r],
    ]
    for i in range(6):
        for j in range(i):
            rows[i][j] = rows[j][i].T
    return np.block(rows)


def assemble_robust_lmi(plant: PlantMatrices, pv: PointVars, uncertainty: UncertaintyModel,
                        signs, rates, tau_bar: float, options: SynthesisOptions,
                        dtau_drho3: float = 1.0) -> np.ndarray:
    """Eight-block-row robust variant: nominal blocks plus uncertainty columns.

    Column 7 carries the H channels weighted by (1, lam2, lam3); column 8
    the eps-scaled E1/E2 rows; both close with -eps I diagonal tails.
    """
    m_nom = assemble_nominal_lmi(plant, pv, signs, rates, tau_bar, options, dtau_drho3)
    h, e1, e2 = uncertainty.h, uncertainty.e1, uncertainty.e2
    ni, nj = h.shape[1], e1.shape[0]
    lam2, lam3 = options.lambda2, options.lambda3
    # the eps multiplier is fixed, so the uncertainty columns are stored in
    # the congruence-normalized form (theta/sqrt(eps), sqrt(eps) phi, -I
    # tails): feasibility is identical and the tails stay unit-scaled
    rt = np.sqrt(pv.eps)
    z = np.zeros

    theta1 = np.block([[h, z((N_X, ni))], [pv.x @ h, z((N_X, ni))]]) / rt      # (2n, 2i)
    phi2_t = np.block([[pv.y @ e1.T, z((N_X, nj))], [e1.T, z((N_X, nj))]]) * rt
    phi3_t = np.block([[pv.y @ e2.T, z((N_X, nj))], [e2.T, z((N_X, nj))]]) * rt

    col7 = np.concatenate([theta1, lam2 * theta1, lam3 * theta1,
                           z((N_W, 2 * ni)), z((N_Z, 2 * ni)), z((N_BAR, 2 * ni))], axis=0)
    col8 = np.concatenate([z((N_BAR, 2 * nj)), phi2_t, phi3_t,
                           z((N_W, 2 * nj)), z((N_Z, 2 * nj)), z((N_BAR, 2 * nj))], axis=0)
    return np.block([
        [m_nom, col7, col8],
        [col7.T, -np.eye(2 * ni), z((2 * ni, 2 * nj))],
        [col8.T, z((2 * nj, 2 * ni)), -np.eye(2 * nj)],
    ])


# ---------------------------------------------------------------------------
# variable layout, point-value probing and cone-program construction
# ---------------------------------------------------------------------------

_VAR_SPEC = [
    # name, rows, cols, n_terms, symmetric
    ("p", N_BAR, N_BAR, N_TERMS_QUADRATIC, True),
    ("x", N_X, N_X, N_TERMS_QUADRATIC, True),
    ("y", N_X, N_X, N_TERMS_QUADRATIC, True),
    ("a_hat", N_X, N_X, N_TERMS_AFFINE, False),
    ("ad_hat", N_X, N_X, N_TERMS_AFFINE, False),
    ("b_hat", N_X, N_Y, N_TERMS_AFFINE, False),
    ("c_hat", N_U, N_X, N_TERMS_AFFINE, False),
    ("cd_hat", N_U, N_X, N_TERMS_AFFINE, False),
    ("d_k", N_U, N_Y, N_TERMS_AFFINE, False),
]

# point-value probe space: every input the LMI assembly reads at one point
_PV_FIELDS = [
    ("p", N_BAR, N_BAR, True), ("x", N_X, N_X, True), ("y", N_X, N_X, True),
    ("a_hat", N_X, N_X, False), ("ad_hat", N_X, N_X, False), ("b_hat", N_X, N_Y, False),
    ("c_hat", N_U, N_X, False), ("cd_hat", N_U, N_X, False), ("d_k", N_U, N_Y, False),
    ("q", N_BAR, N_BAR, True), ("r", N_BAR, N_BAR, True),
    ("dp0", N_BAR, N_BAR, True), ("dp1", N_BAR, N_BAR, True), ("dp2", N_BAR, N_BAR, True),
    ("gamma", 1, 1, None),
]


def _tri_units(d: int):
    """Symmetric unit matrices in svec (column-stacked upper-triangle) order."""
    units = []
    for j in range(d):
        for i in range(j + 1):
            u = np.zeros((d, d))
            u[i, j] = 1.0
            u[j, i] = 1.0
            units.append(u)
    return units


def _full_units(r: int, c: int):
    units = []
    for i in range(r):
        for j in range(c):
            u = np.zeros((r, c))
            u[i, j] = 1.0
            units.append(u)
    return units


def _tri_scale(d: int) -> np.ndarray:
    """svec scaling pattern (1 on diagonal slots, sqrt2 off-diagonal)."""
    out = np.empty(svec_rows(d))
    k = 0
    for j in range(d):
        for i in range(j + 1):
            out[k] = 1.0 if i == j else np.sqrt(2.0)
            k += 1
    return out


class _Layout:
    """Flat packing of the basis-term unknowns (plus gamma and margin)."""

    def __init__(self, pxy_quadratic: bool):
        self.slots: dict[str, list[tuple[int, int]]] = {}
        self.shapes: dict[str, tuple[int, int, bool]] = {}
        off = 0
        for name, r, c, k, symm in _VAR_SPEC:
            if not pxy_quadratic and name in ("p", "x", "y"):
                k = N_TERMS_AFFINE
            per = svec_rows(r) if symm else r * c
            self.slots[name] = [(off + t * per, per) for t in range(k)]
            self.shapes[name] = (r, c, symm)
            off += k * per
        for name in ("q", "r"):
            self.slots[name] = [(off, svec_rows(N_BAR))]
            self.shapes[name] = (N_BAR, N_BAR, True)
            off += svec_rows(N_BAR)
        self.gamma_idx = off
        self.margin_idx = off + 1
        self.n_vars = off + 2

    def n_terms(self, name: str) -> int:
        return len(self.slots[name])

    def unpack(self, x: np.ndarray) -> dict:
        """Vector -> named numpy term stacks."""
        out = {}
        for name, slots in self.slots.items():
            r, c, symm = self.shapes[name]
            mats = []
            for off, per in slots:
                seg = x[off:off + per]
                if symm:
                    m = np.zeros((r, c))
                    k = 0
                    for j in range(c):
                        for i in range(j + 1):
                            m[i, j] = m[j, i] = seg[k]
                            k += 1
                else:
                    m = seg.reshape(r, c)
                mats.append(m)
            out[name] = mats if name not in ("q", "r") else mats[0]
        return out

    def quad_reg_diag(self, reg: float) -> np.ndarray:
        """Diagonal quadratic penalty on the quadratic basis terms of P, X, Y."""
        diag = np.zeros(self.n_vars)
        for name in ("p", "x", "y"):
            r, c, symm = self.shapes[name]
            pattern = np.where(_tri_scale(r) > 1.0, 2.0, 1.0)
            for off, per in self.slots[name][N_TERMS_AFFINE:]:
                diag[off:off + per] = 2.0 * reg * pattern
        return diag


def _pv_zero() -> PointVars:
    z = np.zeros
    return PointVars(
        p=z((N_BAR, N_BAR)), x=z((N_X, N_X)), y=z((N_X, N_X)),
        a_hat=z((N_X, N_X)), ad_hat=z((N_X, N_X)), b_hat=z((N_X, N_Y)),
        c_hat=z((N_U, N_X)), cd_hat=z((N_U, N_X)), d_k=z((N_U, N_Y)),
        q=z((N_BAR, N_BAR)), r=z((N_BAR, N_BAR)),
        dp=[z((N_BAR, N_BAR)) for _ in range(3)], gamma=0.0, eps=1.0,
    )


def _pv_units():
    """Enumerate (field, unit) probes spanning the point-value space."""
    probes = []
    for name, r, c, symm in _PV_FIELDS:
        if symm is None:
            probes.append((name, 1.0))
        elif symm:
            probes.extend((name, u) for u in _tri_units(r))
        else:
            probes.extend((name, u) for u in _full_units(r, c))
    return probes


def _apply_probe(pv: PointVars, name: str, unit, eps: float) -> PointVars:
    out = copy.copy(pv)
    out.dp = list(pv.dp)
    out.eps = eps
    if name == "gamma":
        out.gamma = 1.0
    elif name.startswith("dp"):
        out.dp[int(name[2])] = unit
    else:
        setattr(out, name, unit)
    return out


class _ProbedPoint:
    """Affine map of the LMI at one grid point, svec'd, per sign pattern.

    cols(sign) gives the (svec_rows x n_probe) matrix; the dp columns flip
    with their sign, the q columns carry the sign-dependent delayed-energy
    coefficient through their (+/-) half-difference.
    """

    def __init__(self, assemble, eps: float):
        base_signs = (1.0, 1.0, 1.0)
        zero = _pv_zero()
        zero.eps = eps
        self.b0 = svec(assemble(zero, base_signs))
        cols_plus = []
        probes = _pv_units()
        for name, unit in probes:
            m = assemble(_apply_probe(zero, name, unit, eps), base_signs)
            cols_plus.append(svec(m) - self.b0)
        self.s_plus = np.column_stack(cols_plus)
        self.names = [name for name, _ in probes]
        # isolate the sign-3 dependence of the q columns
        minus_signs = (1.0, 1.0, -1.0)
        q_idx = [i for i, n in enumerate(self.names) if n == "q"]
        cols_qminus = []
        for i in q_idx:
            name, unit = probes[i]
            m = assemble(_apply_probe(zero, name, unit, eps), minus_signs)
            cols_qminus.append(svec(m) - self.b0)
        qm = np.column_stack(cols_qminus)
        qp = self.s_plus[:, q_idx]
        self._q_idx = np.array(q_idx)
        self._q_even = 0.5 * (qp + qm)
        self._q_odd = 0.5 * (qp - qm)
        self._dp_idx = {i: int(n[2]) for i, n in enumerate(self.names) if n.startswith("dp")}

    def cols(self, signs) -> np.ndarray:
        s = self.s_plus.copy()
        for col, axis in self._dp_idx.items():
            if signs[axis] < 0:
                s[:, col] = -s[:, col]
        if signs[2] < 0:
            s[:, self._q_idx] = self._q_even - self._q_odd
        return s


def _point_weight_matrix(layout: _Layout, coord: np.ndarray, jac: np.ndarray) -> sparse.csc_matrix:
    """Sparse map W: layout variables -> point-value probe coordinates."""
    rows, cols, vals = [], [], []
    row = 0

    def add_mapped(name, weights):
        nonlocal row
        slots = layout.slots[name]
        r, c, symm = layout.shapes[name]
        per = slots[0][1]
        for k in range(per):
            for t, (off, _) in enumerate(slots):
                w = weights[t]
                if w != 0.0:
                    rows.append(row)
                    cols.append(off + k)
                    vals.append(w)
            row += 1

    wq = basis_weights(coord)
    wa = basis_weights(coord, N_TERMS_AFFINE)
    for name, r, c, symm in _PV_FIELDS:
        if name == "gamma":
            rows.append(row)
            cols.append(layout.gamma_idx)
            vals.append(1.0)
            row += 1
        elif name.startswith("dp"):
            i = int(name[2])
            dw = basis_derivative_weights(coord, i) * jac[i]
            add_mapped("p", dw[: layout.n_terms("p")])
        elif name in ("q", "r"):
            off, per = layout.slots[name][0]
            for k in range(per):
                rows.append(row)
                cols.append(off + k)
                vals.append(1.0)
                row += 1
        elif name in ("p", "x", "y"):
            add_mapped(name, wq[: layout.n_terms(name)])
        else:
            add_mapped(name, wa)
    n_probe = row
    return sparse.csc_matrix((vals, (rows, cols)), shape=(n_probe, layout.n_vars))


class _SynthesisProblem:
    """Cone-program factory for one (params, weights, options, uncertainty).

    The +-nu_i dP/drho_i sweep is handled through one auxiliary symmetric
    bound W2 per constraint point: W2 dominates all 2^s sign combinations
    (eight 6x6 cones) and replaces the rate sum inside the big inequality,
    whose delayed-energy block is assembled at its dominant sign (Q > 0
    makes the +nu3 case the binding one).  Any solution therefore satisfies
    every original sign pattern -- `verify_solution` re-checks all eight
    explicitly -- while the solver sees one large cone per point instead of
    eight, which is what keeps synthesis inside its runtime budget.
    """

    def __init__(self, params: ParameterSet, weights: PlantWeights,
                 options: SynthesisOptions, uncertainty: UncertaintyModel | None):
        self.params = params
        self.weights = weights
        self.options = options
        self.uncertainty = uncertainty
        self.scaling = make_scaling(params)
        self.layout = _Layout(options.pxy_quadratic)
        self.rates_scaled = params.rates * self.scaling.time_scale
        self.tau_bar_scaled = params.tau_bar / self.scaling.time_scale
        self.dtau = 1.0 / self.scaling.time_scale
        self.unc_scaled = None if uncertainty is None else self.scaling.scale_uncertainty(uncertainty)
        self.lmi_dim = LMI_DIM_NOMINAL if uncertainty is None else (
            LMI_DIM_NOMINAL + 2 * self.unc_scaled.h.shape[1] + 2 * self.unc_scaled.e1.shape[0])
        self._probe_cache: dict[tuple, tuple[_ProbedPoint, sparse.csc_matrix]] = {}
        # rho-independent probes for the positivity blocks
        self._v_probe = _ProbedPoint(
            lambda pv, s: np.block([[pv.y, np.eye(N_X)], [np.eye(N_X), pv.x]]), options.eps)
        self._p_probe = _ProbedPoint(lambda pv, s: pv.p, options.eps)
        # svec embedding of a symmetric 6x6 into the (2,2) block of the big LMI
        n_tri = svec_rows(N_BAR)
        rows, cols, vals = [], [], []
        k = 0
        for b in range(N_BAR):
            for a in range(b + 1):
                i, j = N_BAR + a, N_BAR + b
                rows.append(j * (j + 1) // 2 + i)
                cols.append(k)
                vals.append(np.sqrt(2.0) if a != b else 1.0)
                k += 1
        self._embed22 = sparse.csc_matrix((vals, (rows, cols)),
                                          shape=(svec_rows(self.lmi_dim), n_tri))

    def _assemble(self, pv: PointVars, signs, plant: PlantMatrices) -> np.ndarray:
        if self.unc_scaled is None:
            return assemble_nominal_lmi(plant, pv, signs, self.rates_scaled,
                                        self.tau_bar_scaled, self.options, self.dtau)
        return assemble_robust_lmi(plant, pv, self.unc_scaled, signs, self.rates_scaled,
                                   self.tau_bar_scaled, self.options, self.dtau)

    def probed(self, rho: np.ndarray) -> tuple[_ProbedPoint, sparse.csc_matrix]:
        key = tuple(np.round(np.asarray(rho, dtype=float), 12))
        if key not in self._probe_cache:
            plant = self.scaling.scale_plant(augment(rho, self.weights))
            probe = _ProbedPoint(lambda pv, s: self._assemble(pv, s, plant), self.options.eps)
            w = _point_weight_matrix(self.layout, self.scaling.coord(rho),
                                     self.scaling.coord_jacobian(rho))
            self._probe_cache[key] = (probe, w)
        return self._probe_cache[key]

    def anchor_points(self) -> list:
        """Synthesis grid plus, by default, the lag-axis midpoint slab.

        The plant depends on the lag through 1/T, which the polynomial basis
        tracks worst between lag grid points; constraining those midpoints
        up front is what lets the doubled-grid verification pass.
        """
        pts = [np.asarray(p) for p in grid(self.params, self.options.grid_counts)]
        if self.options.anchor_midpoints:
            ck, ct, ctau = self.options.grid_counts
            k_axis = np.linspace(self.params.box[0, 0], self.params.box[0, 1], ck)
            tau_axis = np.linspace(self.params.box[2, 0], self.params.box[2, 1], ctau)
            t_axis = np.linspace(self.params.box[1, 0], self.params.box[1, 1], ct)
            t_mids = 0.5 * (t_axis[:-1] + t_axis[1:])
            pts.extend(np.array([k, t, tau])
                       for t in t_mids for k in k_axis for tau in tau_axis)
        return pts

    def build(self, points, gamma_fixed: float | None, with_margin: bool) -> ConeProgram:
        lay = self.layout
        points = list(points)
        n_tri = svec_rows(N_BAR)
        n_vars = lay.n_vars + n_tri * len(points)  # trailing W2 block per point
        prog = ConeProgram(n_vars)
        delta = self.options.delta
        dim = self.lmi_dim
        svec_eye = svec(np.eye(dim))
        tri_scale6 = _tri_scale(N_BAR)
        pv_rows = {}
        row = 0
        for name, r, c, symm in _PV_FIELDS:
            per = 1 if symm is None else (svec_rows(r) if symm else r * c)
            pv_rows[name] = (row, per)
            row += per

        def widen(mat):
            mat = sparse.csr_matrix(mat)
            return sparse.hstack(
                [mat, sparse.csr_matrix((mat.shape[0], n_vars - mat.shape[1]))], format="csr")

        for idx, rho in enumerate(points):
            probe, w = self.probed(rho)
            w2_off = lay.n_vars + idx * n_tri
            # positivity: P(rho) >= (delta + margin) I, V(rho) >= (delta + margin) I
            svec_eye6 = svec(np.eye(N_BAR))
            for pos_probe in (self._p_probe, self._v_probe):
                a = widen(-sparse.csr_matrix(pos_probe.s_plus) @ w)
                if with_margin:
                    a = a + sparse.csc_matrix(
                        (svec_eye6, (np.arange(len(svec_eye6)),
                                     np.full(len(svec_eye6), lay.margin_idx))), shape=a.shape)
                prog.add_psd(a, pos_probe.b0 - delta * svec_eye6, N_BAR)
            # big inequality with W2 in place of the rate sum, dominant sign for q
            cols = probe.s_plus.copy()
            for col, _axis in probe._dp_idx.items():
                cols[:, col] = 0.0
            a_big = widen(sparse.csr_matrix(cols) @ w)
            a_big = a_big + self._embed22 @ sparse.csc_matrix(
                (np.ones(n_tri), (np.arange(n_tri), np.arange(w2_off, w2_off + n_tri))),
                shape=(n_tri, n_vars))
            if with_margin:
                a_big = a_big + sparse.csc_matrix(
                    (svec_eye, (np.arange(len(svec_eye)), np.full(len(svec_eye), lay.margin_idx))),
                    shape=a_big.shape)
            prog.add_psd(a_big, -probe.b0 - delta * svec_eye, dim)
            # W2 >= sum_i sg_i nu_i dP/drho_i for every sign pattern
            w_csr = sparse.csr_matrix(w)
            dp_rows = [w_csr[pv_rows[f"dp{i}"][0]: pv_rows[f"dp{i}"][0] + n_tri]
                       for i in range(N_RHO)]
            scale_diag = sparse.diags(tri_scale6)
            w2_cols = -sparse.csc_matrix(
                (tri_scale6, (np.arange(n_tri), np.arange(w2_off, w2_off + n_tri))),
                shape=(n_tri, n_vars))
            for signs in itertools.product((-1.0, 1.0), repeat=N_RHO):
                a_small = w2_cols.copy()
                combo = sum(signs[i] * self.rates_scaled[i] * dp_rows[i] for i in range(N_RHO))
                a_small = a_small + widen(scale_diag @ combo)
                prog.add_psd(a_small, np.zeros(n_tri), N_BAR)
        # constant positivity: Q >= delta I, R >= delta I
        for name in ("q", "r"):
            off, per = lay.slots[name][0]
            a = sparse.csc_matrix(
                (-tri_scale6, (np.arange(per), np.arange(off, off + per))), shape=(per, n_vars))
            prog.add_psd(a, -delta * svec(np.eye(N_BAR)), N_BAR)
        # scalar rows
        e_g = sparse.csc_matrix(([1.0], ([0], [lay.gamma_idx])), shape=(1, n_vars))
        e_m = sparse.csc_matrix(([1.0], ([0], [lay.margin_idx])), shape=(1, n_vars))
        if gamma_fixed is None:
            prog.add_nonneg(sparse.vstack([-e_g, e_g]), np.array([0.0, self.options.gamma_cap]))
        else:
            prog.add_zero(e_g, np.array([float(gamma_fixed)]))
        if with_margin:
            prog.add_nonneg(sparse.vstack([-e_m, e_m]), np.array([0.0, self.options.margin_cap]))
        else:
            prog.add_zero(e_m, np.array([0.0]))
        return prog

    def anchor_points(self) -> list:
        """Synthesis grid plus, by default, the lag-axis midpoint slab.

        The plant depends on the lag through 1/T, which the polynomial basis
        tracks worst between lag grid points; constraining those midpoints
        up front is what lets the doubled-grid verification pass.
        """
        pts = [np.asarray(p) for p in grid(self.params, self.options.grid_counts)]
        if self.options.anchor_midpoints:
            ck, ct, ctau = self.options.grid_counts
            k_axis = np.linspace(self.params.box[0, 0], self.params.box[0, 1], ck)
            tau_axis = np.linspace(self.params.box[2, 0], self.params.box[2, 1], ctau)
            t_axis = np.linspace(self.params.box[1, 0], self.params.box[1, 1], ct)
            t_mids = 0.5 * (t_axis[:-1] + t_axis[1:])
            pts.extend(np.array([k, t, tau])
                       for t in t_mids for k in k_axis for tau in tau_axis)
        return pts

    def solve_gamma_min(self, points) -> tuple[float, np.ndarray]:
        prog = self.build(points, gamma_fixed=None, with_margin=False)
        q = np.zeros(prog.n_vars)
        q[self.layout.gamma_idx] = 1.0
        res = prog.solve(q, tol_gap_rel=self.options.tol_gap_rel, tol_gap_abs=0.5,
                         tol_feas=1e-6)
        if res.infeasible:
            raise Infeasible(f"no gamma below {self.options.gamma_cap} is certifiable ({res.status})")
        if res.x is None:
            raise SolverFailure(f"gamma minimization ended with status {res.status}")
        # a stalled-but-converged iterate still pins gamma well enough: the
        # re-centering solve and the numeric verification own correctness
        return float(res.x[self.layout.gamma_idx]), res.x

    def solve_polish(self, points, gamma_value: float, extra_points=()) -> tuple[np.ndarray, float]:
        prog = self.build(list(points) + list(extra_points), gamma_fixed=gamma_value,
                          with_margin=True)
        q = np.zeros(prog.n_vars)
        q[self.layout.margin_idx] = -1.0
        p_diag = np.zeros(prog.n_vars)
        p_diag[: self.layout.n_vars] = self.layout.quad_reg_diag(self.options.quad_reg)
        res = prog.solve(q, p_diag=p_diag, tol_gap_rel=self.options.polish_tol_rel,
                         tol_gap_abs=1e-5, tol_feas=self.options.tol_feas)
        if res.infeasible:
            raise Infeasible(f"re-centering at gamma={gamma_value} infeasible ({res.status})")
        if res.x is None:
            raise SolverFailure(f"re-centering ended with status {res.status}")
        # stalled iterates pass through: the verification pass decides
        return res.x, float(res.x[self.layout.margin_idx])


# ---------------------------------------------------------------------------
# solution containers
# ---------------------------------------------------------------------------

@dataclass
class ControllerRealization:
    """State-space controller matrices at one scheduling point."""

    a_k: np.ndarray
    ad_k: np.ndarray
    b_k: np.ndarray
    c_k: np.ndarray
    cd_k: np.ndarray
    d_k: np.ndarray
    m: np.ndarray
    n: np.ndarray


@dataclass
class SynthesisSolution:
    """Solved decision variables (scaled coordinates) plus scaling record."""

    kind: str  # "nominal" | "robust"
    terms: dict  # name -> list of term arrays; "q", "r" single arrays
    gamma: float
    gamma_min: float
    eps: float
    lambda2: float
    lambda3: float
    params: ParameterSet
    weights: PlantWeights
    scaling: ScalingSpec
    grid_counts: tuple[int, int, int]
    delta: float
    margin: float
    uncertainty: UncertaintyModel | None = None
    refine_points: list = field(default_factory=list)
    solve_seconds: float = 0.0
    solver: str = "clarabel"

    def point_vars(self, rho: np.ndarray) -> PointVars:
        coord = self.scaling.coord(rho)
        jac = self.scaling.coord_jacobian(rho)

        def comb(ts, w):
            return sum(float(wj) * t for wj, t in zip(w, ts))

        wq = basis_weights(coord)
        wa = basis_weights(coord, N_TERMS_AFFINE)
        t = self.terms
        dp = [comb(t["p"], basis_derivative_weights(coord, i)) * float(jac[i]) for i in range(N_RHO)]
        return PointVars(
            p=comb(t["p"], wq), x=comb(t["x"], wq), y=comb(t["y"], wq),
            a_hat=comb(t["a_hat"], wa), ad_hat=comb(t["ad_hat"], wa), b_hat=comb(t["b_hat"], wa),
            c_hat=comb(t["c_hat"], wa), cd_hat=comb(t["cd_hat"], wa), d_k=comb(t["d_k"], wa),
            q=t["q"], r=t["r"], dp=dp, gamma=self.gamma, eps=self.eps,
        )

    def scaled_plant(self, rho: np.ndarray) -> PlantMatrices:
        return self.scaling.scale_plant(augment(rho, self.weights))

    def controller_at(self, rho: np.ndarray) -> ControllerRealization:
        """Evaluate, reconstruct and convert the controller to physical time."""
        rho = self.params.clamp(rho)
        pv = self.point_vars(rho)
        plant = self.scaled_plant(rho)
        m, n = factorize(pv.x, pv.y)
        ctrl = reconstruct_controller(pv, plant, m, n)
        s = self.scaling.time_scale
        return ControllerRealization(
            a_k=ctrl.a_k / s, ad_k=ctrl.ad_k / s, b_k=ctrl.b_k / s,
            c_k=ctrl.c_k, cd_k=ctrl.cd_k, d_k=ctrl.d_k, m=ctrl.m, n=ctrl.n,
        )


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass
class ConstraintResidual:
    rho: tuple
    signs: tuple | None
    kind: str  # "lmi" | "p_pos" | "v_pos" | "q_pos" | "r_pos"
    eigenvalue: float  # max eig for lmi (< 0 required), min eig otherwise (> 0)


@dataclass
class VerificationReport:
    passed: bool
    worst_lmi: float
    worst_pos: float
    residuals: list

    def summary(self) -> dict:
        return {"passed": bool(self.passed), "worst_lmi_eig": self.worst_lmi,
                "worst_positivity_eig": self.worst_pos, "n_constraints": len(self.residuals)}

    def violating_points(self, slack: float = 0.0):
        seen = {}
        for res in self.residuals:
            if res.kind in ("q_pos", "r_pos") or not res.rho:
                continue
            excess = res.eigenvalue if res.kind == "lmi" else -res.eigenvalue
            if excess > -slack:
                key = res.rho
                if key not in seen or excess > seen[key]:
                    seen[key] = excess
        return [np.array(k) for k, _ in sorted(seen.items(), key=lambda kv: -kv[1])]


def dense_counts(counts) -> tuple:
    """Twice the grid resolution: the midpoint of every cell is included."""
    return tuple(2 * c - 1 for c in counts)


def verify_solution(solution: SynthesisSolution, options: SynthesisOptions | None = None,
                    counts: tuple | None = None) -> VerificationReport:
    """Re-assemble every inequality numerically and report eigenvalue residuals."""
    opts = options or SynthesisOptions(lambda2=solution.lambda2, lambda3=solution.lambda3,
                                       eps=solution.eps, grid_counts=solution.grid_counts,
                                       delta=solution.delta)
    counts = counts or dense_counts(solution.grid_counts)
    params = solution.params
    scaling = solution.scaling
    rates_scaled = params.rates * scaling.time_scale
    tau_bar_scaled = params.tau_bar / scaling.time_scale
    dtau = 1.0 / scaling.time_scale
    unc_scaled = None if solution.uncertainty is None else scaling.scale_uncertainty(solution.uncertainty)

    residuals = []
    worst_lmi = -np.inf
    worst_pos = np.inf
    for rho in grid(params, counts):
        pv = solution.point_vars(rho)
        plant = scaling.scale_plant(augment(rho, solution.weights))
        p_eig = min_eigenvalue(pv.p)
        v_eig = min_eigenvalue(np.block([[pv.y, np.eye(N_X)], [np.eye(N_X), pv.x]]))
        residuals.append(ConstraintResidual(tuple(rho), None, "p_pos", p_eig))
        residuals.append(ConstraintResidual(tuple(rho), None, "v_pos", v_eig))
        worst_pos = min(worst_pos, p_eig, v_eig)
        for signs in itertools.product((-1.0, 1.0), repeat=N_RHO):
            if unc_scaled is None:
                m = assemble_nominal_lmi(plant, pv, signs, rates_scaled, tau_bar_scaled, opts, dtau)
            else:
                m = assemble_robust_lmi(plant, pv, unc_scaled, signs, rates_scaled,
                                        tau_bar_scaled, opts, dtau)
            eig = max_eigenvalue(m, sym_tol=1e-6)
            residuals.append(ConstraintResidual(tuple(rho), signs, "lmi", eig))
            worst_lmi = max(worst_lmi, eig)
    for name, kind in (("q", "q_pos"), ("r", "r_pos")):
        eig = min_eigenvalue(solution.terms[name])
        residuals.append(ConstraintResidual((), None, kind, eig))
        worst_pos = min(worst_pos, eig)
    return VerificationReport(passed=bool(worst_lmi < 0.0 and worst_pos > 0.0),
                              worst_lmi=worst_lmi, worst_pos=worst_pos, residuals=residuals)


# ---------------------------------------------------------------------------
# synthesis driver
# ---------------------------------------------------------------------------

def synthesize(params: ParameterSet, weights: PlantWeights, options: SynthesisOptions,
               uncertainty: UncertaintyModel | None = None) -> SynthesisSolution:
    """Minimize gamma over the gridded constraint system, then re-center.

    After the gamma minimization, a margin maximization at
    gamma_backoff * gamma_min picks a strictly interior point.  The result
    is verified on the doubled grid; scheduling points that still violate
    feed back as extra constraints for up to refine_rounds re-solves.
    """
    t_start = time.time()
    problem = _SynthesisProblem(params, weights, options, uncertainty)
    pts = problem.anchor_points()

    gamma_min, _ = problem.solve_gamma_min(pts)
    gamma_final = options.gamma_backoff * gamma_min

    extra: list = []
    solution = None
    for round_idx in range(options.refine_rounds + 1):
        x, margin = problem.solve_polish(pts, gamma_final, extra)
        terms = problem.layout.unpack(x)
        solution = SynthesisSolution(
            kind="robust" if uncertainty is not None else "nominal",
            terms=terms, gamma=gamma_final, gamma_min=gamma_min, eps=options.eps,
            lambda2=options.lambda2, lambda3=options.lambda3, params=params,
            weights=weights, scaling=problem.scaling,
            grid_counts=tuple(options.grid_counts), delta=options.delta, margin=margin,
            uncertainty=uncertainty, refine_points=[list(map(float, p)) for p in extra],
            solve_seconds=time.time() - t_start,
        )
        report = verify_solution(solution)
        if report.passed:
            break
        if round_idx == options.refine_rounds:
            break
        new_pts = report.violating_points(slack=0.0)[: options.refine_max_points]
        known = {tuple(np.round(p, 9)) for p in extra}
        extra.extend(p for p in new_pts if tuple(np.round(p, 9)) not in known)
    solution.solve_seconds = time.time() - t_start
    return solution


# ---------------------------------------------------------------------------
# factorization and controller reconstruction
# ---------------------------------------------------------------------------

def factorize(x: np.ndarray, y: np.ndarray, cond_limit: float = 1e8) -> tuple[np.ndarray, np.ndarray]:
    """Balanced factorization I - X Y = N M^T via the SVD.

    Returns (m, n) square and invertible; raises when I - X Y is too close
    to singular for the back-substitution to be trustworthy.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    target = np.eye(x.shape[0]) - x @ y
    u, s, vt = np.linalg.svd(target)
    if s[-1] <= 0.0 or s[0] / s[-1] > cond_limit:
        raise NearSingularFactorization(
            f"I - XY condition number {s[0] / max(s[-1], 1e-300):.3e} exceeds {cond_limit:.1e}")
    root = np.sqrt(s)
    n = u * root
    m = vt.T * root
    return m, n


def reconstruct_controller(pv: PointVars, plant: PlantMatrices,
                           m: np.ndarray, n: np.ndarray) -> ControllerRealization:
    """Back-substitute the hat-matrices into controller state-space data.

    Order matters: the delayed and direct output maps come first, then the
    input map, then the delayed and direct state maps.
    """
    a, ad, b2 = plant.A, plant.Ad, plant.B2
    c2, c2d = plant.C2, plant.C2d
    x, y = np.asarray(pv.x, dtype=float), np.asarray(pv.y, dtype=float)
    d_k = np.asarray(pv.d_k, dtype=float)
    m_inv_t = np.linalg.inv(m.T)
    n_inv = np.linalg.inv(n)

    cd_k = (np.asarray(pv.cd_hat) - d_k @ c2d @ y) @ m_inv_t
    c_k = (np.asarray(pv.c_hat) - d_k @ c2 @ y) @ m_inv_t
    b_k = n_inv @ (np.asarray(pv.b_hat) - x @ b2 @ d_k)
    ad_k = -n_inv @ (x @ ad @ y + x @ b2 @ d_k @ c2d @ y + n @ b_k @ c2d @ y
                     + x @ b2 @ cd_k @ m.T - np.asarray(pv.ad_hat)) @ m_inv_t
    a_k = -n_inv @ (x @ a @ y + x @ b2 @ d_k @ c2 @ y + n @ b_k @ c2 @ y
                    + x @ b2 @ c_k @ m.T - np.asarray(pv.a_hat)) @ m_inv_t
    return ControllerRealization(a_k=a_k, ad_k=ad_k, b_k=b_k, c_k=c_k, cd_k=cd_k,
                                 d_k=d_k, m=m, n=n)


def hat_matrices_from_controller(ctrl: ControllerRealization, plant: PlantMatrices,
                                 x: np.ndarray, y: np.ndarray) -> dict:
    """Forward map (controller -> hat matrices); the reconstruction round-trip
    check re-derives the decision values from the recovered controller."""
    a, ad, b2 = plant.A, plant.Ad, plant.B2
    c2, c2d = plant.C2, plant.C2d
    m, n, d_k = ctrl.m, ctrl.n, ctrl.d_k
    return {
        "a_hat": x @ a @ y + x @ b2 @ d_k @ c2 @ y + n @ ctrl.b_k @ c2 @ y
                 + x @ b2 @ ctrl.c_k @ m.T + n @ ctrl.a_k @ m.T,
        "ad_hat": x @ ad @ y + x @ b2 @ d_k @ c2d @ y + n @ ctrl.b_k @ c2d @ y
                  + x @ b2 @ ctrl.cd_k @ m.T + n @ ctrl.ad_k @ m.T,
        "b_hat": x @ b2 @ d_k + n @ ctrl.b_k,
        "c_hat": d_k @ c2 @ y + ctrl.c_k @ m.T,
        "cd_hat": d_k @ c2d @ y + ctrl.cd_k @ m.T,
    }


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def solution_to_dict(solution: SynthesisSolution) -> dict:
    return {
        "schema": 1,
        "kind": solution.kind,
        "gamma": solution.gamma,
        "gamma_min": solution.gamma_min,
        "eps": solution.eps,
        "lambda2": solution.lambda2,
        "lambda3": solution.lambda3,
        "margin": solution.margin,
        "delta": solution.delta,
        "grid_counts": list(solution.grid_counts),
        "refine_points": solution.refine_points,
        "solve_seconds": solution.solve_seconds,
        "solver": solution.solver,
        "params": {
            "box": solution.params.box.tolist(),
            "rates": solution.params.rates.tolist(),
            "mu": solution.params.mu,
            "tau_bar": solution.params.tau_bar,
        },
        "weights": asdict(solution.weights),
        "scaling": {
            "time_scale": solution.scaling.time_scale,
            "state_scale": list(solution.scaling.state_scale),
        },
        "uncertainty": None if solution.uncertainty is None else {
            "h": solution.uncertainty.h.tolist(),
            "e1": solution.uncertainty.e1.tolist(),
            "e2": solution.uncertainty.e2.tolist(),
        },
        "terms": {name: ([t.tolist() for t in ts] if isinstance(ts, list) else ts.tolist())
                  for name, ts in solution.terms.items()},
    }


def solution_from_dict(doc: dict) -> SynthesisSolution:
    if doc.get("schema") != 1:
        raise ValueError(f"unsupported synthesis schema {doc.get('schema')!r}")
    params = ParameterSet(box=np.array(doc["params"]["box"]),
                          rates=np.array(doc["params"]["rates"]),
                          mu=doc["params"]["mu"], tau_bar=doc["params"]["tau_bar"])
    weights = PlantWeights(**doc["weights"])
    terms = {}
    for name, ts in doc["terms"].items():
        if name in ("q", "r"):
            terms[name] = np.array(ts)
        else:
            terms[name] = [np.array(t) for t in ts]
    unc = None
    if doc.get("uncertainty"):
        unc = UncertaintyModel(h=np.array(doc["uncertainty"]["h"]),
                               e1=np.array(doc["uncertainty"]["e1"]),
                               e2=np.array(doc["uncertainty"]["e2"]))
    return SynthesisSolution(
        kind=doc["kind"], terms=terms, gamma=doc["gamma"], gamma_min=doc.get("gamma_min", doc["gamma"]),
        eps=doc["eps"], lambda2=doc["lambda2"], lambda3=doc["lambda3"], params=params, weights=weights,
        scaling=ScalingSpec(time_scale=doc["scaling"]["time_scale"],
                            state_scale=tuple(doc["scaling"]["state_scale"]),
                            box=params.box.copy()),
        grid_counts=tuple(doc["grid_counts"]), delta=doc["delta"], margin=doc["margin"],
        uncertainty=unc, refine_points=doc.get("refine_points", []),
        solve_seconds=doc.get("solve_seconds", 0.0), solver=doc.get("solver", "clarabel"),
    )


def save_solution(solution: SynthesisSolution, path) -> None:
    with open(path, "w") as fh:
        json.dump(solution_to_dict(solution), fh, sort_keys=True)


def load_solution(path) -> SynthesisSolution:
    with open(path) as fh:
        return solution_from_dict(json.load(fh))
