"""Discrete height equation on the half-period rectangle and continuation.

Unknowns live on a tensor grid: q-nodes 0..pi (even symmetry removes the
translation invariance, so no phase condition is needed) times the p-grid
of the laminar family.  Second-order finite differences everywhere, with
symmetric ghost reflection across q = 0 and q = pi, a 3-point one-sided
h_p stencil on the free-surface row, and the nonlocal mean depth

    d(h) = full-period average of the top trace
         = (1/N_q) (h_0/2 + h_1 + ... + h_{N_q-1} + h_{N_q}/2)|_{p=0}.

The Jacobian splits into a banded stencil part, a rank-one correction from
the d(h) coupling (resolved by Sherman-Morrison around the banded solve),
and one extra column for dG/dQ; frozen-amplitude and pseudo-arclength
corrections append a single border row handled by block elimination.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded

from .errors import EllipticityLossError, NewtonFailureError, ShapeError
from .laminar import LaminarFlow
from .profiles import PGrid, Physics

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 40
MAX_HALVINGS = 8


@dataclass(frozen=True)
class HeightField:
    """Discrete (Q, h) on the half-period rectangle [0, pi] x [p0, 0].

    ``h`` is indexed [iq, ip] with ip = 0 the bed row (h = 0 there) and
    ip = N_p the free surface.
    """

    Q: float
    N_q: int
    pgrid: PGrid
    h: np.ndarray
    provenance: str = "unspecified"
    residual_norm: float = float("nan")

    def __post_init__(self):
        if self.h.shape != (self.N_q + 1, self.pgrid.N_p + 1):
            raise ShapeError(
                f"h shape {self.h.shape} != {(self.N_q + 1, self.pgrid.N_p + 1)}")

    @property
    def dq(self):
        return np.pi / self.N_q

    @property
    def q_nodes(self):
        return np.linspace(0.0, np.pi, self.N_q + 1)

    @property
    def top(self):
        return self.h[:, -1]

    def depth(self) -> float:
        return float(period_mean(self.top))

    def amplitude(self) -> float:
        return 0.5 * float(self.h[0, -1] - self.h[-1, -1])


def period_mean(top_row) -> float:
    """Full-period mean of an even half-period trace (trapezoid weights)."""
    n = top_row.shape[0] - 1
    return (0.5 * top_row[0] + top_row[1:-1].sum() + 0.5 * top_row[-1]) / n


def mean_weights(N_q: int):
    w = np.full(N_q + 1, 1.0 / N_q)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _q_indices(N_q):
    """Left/right q-neighbour indices under even reflection."""
    iq = np.arange(N_q + 1)
    left = np.abs(iq - 1)
    right = N_q - np.abs(N_q - (iq + 1))
    return left, right


def derivatives(hf: HeightField):
    """All finite-difference derivative arrays of h (second order)."""
    h = hf.h
    dq, dp = hf.dq, hf.pgrid.h
    left, right = _q_indices(hf.N_q)
    hq = (h[right, :] - h[left, :]) / (2.0 * dq)
    hqq = (h[right, :] - 2.0 * h + h[left, :]) / dq ** 2
    hp = np.empty_like(h)
    hp[:, 1:-1] = (h[:, 2:] - h[:, :-2]) / (2.0 * dp)
    hp[:, 0] = (-3.0 * h[:, 0] + 4.0 * h[:, 1] - h[:, 2]) / (2.0 * dp)
    hp[:, -1] = (3.0 * h[:, -1] - 4.0 * h[:, -2] + h[:, -3]) / (2.0 * dp)
    hpp = np.zeros_like(h)
    hpp[:, 1:-1] = (h[:, 2:] - 2.0 * h[:, 1:-1] + h[:, :-2]) / dp ** 2
    hpq = (hp[right, :] - hp[left, :]) / (2.0 * dq)
    return hq, hp, hqq, hpp, hpq


def residual(physics: Physics, hf: HeightField, sigma: float | None = None,
             check_ellipticity: bool = True):
    """Node-indexed residual of the height equation.

    Interior rows carry the quasilinear elliptic operator with the
    stratification term, the top row the Venttsel free-surface condition,
    the bottom row the Dirichlet condition h = 0.
    """
    if sigma is None:
        sigma = physics.sigma
    hq, hp, hqq, hpp, hpq = derivatives(hf)
    if check_ellipticity and np.any(hp <= 0):
        raise EllipticityLossError("h_p <= 0 on the grid")
    p = hf.pgrid.nodes
    rho_p = physics.rho_p(p)[None, :]
    beta = physics.beta_at(p)[None, :]
    g = physics.g
    d = hf.depth()
    R = np.empty_like(hf.h)
    R[:, 1:-1] = ((1.0 + hq ** 2) * hpp + hqq * hp ** 2
                  - 2.0 * hq * hp * hpq
                  - g * (hf.h - d) * rho_p * hp ** 3
                  + hp ** 3 * beta)[:, 1:-1]
    R[:, 0] = hf.h[:, 0]
    top = hf.top
    hq_t, hqq_t, hp_t = hq[:, -1], hqq[:, -1], hp[:, -1]
    kappa = -hqq_t / (1.0 + hq_t ** 2) ** 1.5
    R[:, -1] = (1.0 + hq_t ** 2
                + hp_t ** 2 * (2.0 * sigma * kappa
                               + 2.0 * g * physics.rho0() * top - hf.Q))
    return R


def surface_curvature(hf: HeightField):
    left, right = _q_indices(hf.N_q)
    top = hf.top
    dq = hf.dq
    hq_t = (top[right] - top[left]) / (2.0 * dq)
    hqq_t = (top[right] - 2.0 * top + top[left]) / dq ** 2
    return -hqq_t / (1.0 + hq_t ** 2) ** 1.5


@dataclass
class JacobianRecord:
    """Banded core + rank-one depth coupling + Q column.

    Apply as J v = band(v) + u (w . v_top) and dG/dQ = q_col.
    """

    ab: np.ndarray          # LAPACK band storage of the stencil part
    bandwidth: int
    u: np.ndarray           # rank-one left factor (flattened node order)
    v: np.ndarray           # rank-one right factor (mean weights, flattened)
    q_col: np.ndarray       # dG/dQ
    shape: tuple

    def matvec(self, vec):
        n = self.shape[0]
        kl = ku = self.bandwidth
        out = np.zeros(n)
        for off in range(-kl, ku + 1):
            diag = self.ab[ku - off]
            if off >= 0:
                out[: n - off] += diag[off:] * vec[off:]
            else:
                out[-off:] += diag[: n + off] * vec[: n + off]
        out += self.u * float(self.v @ vec)
        return out


def _flat(iq, ip, npp):
    return iq * npp + ip


def jacobian(physics: Physics, hf: HeightField,
             sigma: float | None = None) -> JacobianRecord:
    """Analytic Jacobian of the residual in band storage."""
    if sigma is None:
        sigma = physics.sigma
    hq, hp, hqq, hpp, hpq = derivatives(hf)
    N_q, N_p = hf.N_q, hf.pgrid.N_p
    npp = N_p + 1
    n = (N_q + 1) * npp
    dq, dp = hf.dq, hf.pgrid.h
    kl = ku = npp + 1
    ab = np.zeros((2 * kl + 1, n))
    left, right = _q_indices(N_q)

    def add(i, j, val):
        ab[ku + i - j, j] += val

    p = hf.pgrid.nodes
    rho_p = physics.rho_p(p)
    beta = physics.beta_at(p)
    g = physics.g
    g_rho0 = g * physics.rho0()
    d = hf.depth()

    for iq in range(N_q + 1):
        ql, qr = left[iq], right[iq]
        for ip in range(1, N_p):
            i = _flat(iq, ip, npp)
            c_pp = 1.0 + hq[iq, ip] ** 2
            c_qq = hp[iq, ip] ** 2
            c_q = 2.0 * hq[iq, ip] * hpp[iq, ip] - 2.0 * hp[iq, ip] * hpq[iq, ip]
            c_p = (2.0 * hqq[iq, ip] * hp[iq, ip]
                   - 2.0 * hq[iq, ip] * hpq[iq, ip]
                   - 3.0 * g * (hf.h[iq, ip] - d) * rho_p[ip] * hp[iq, ip] ** 2
                   + 3.0 * hp[iq, ip] ** 2 * beta[ip])
            c_pq = -2.0 * hq[iq, ip] * hp[iq, ip]
            c_0 = -g * rho_p[ip] * hp[iq, ip] ** 3
            # p-second difference
            add(i, _flat(iq, ip - 1, npp), c_pp / dp ** 2)
            add(i, i, -2.0 * c_pp / dp ** 2)
            add(i, _flat(iq, ip + 1, npp), c_pp / dp ** 2)
            # q-second difference (reflection doubles the mirrored node)
            add(i, _flat(ql, ip, npp), c_qq / dq ** 2)
            add(i, i, -2.0 * c_qq / dq ** 2)
            add(i, _flat(qr, ip, npp), c_qq / dq ** 2)
            # q-first difference
            add(i, _flat(qr, ip, npp), c_q / (2.0 * dq))
            add(i, _flat(ql, ip, npp), -c_q / (2.0 * dq))
            # p-first difference
            add(i, _flat(iq, ip + 1, npp), c_p / (2.0 * dp))
            add(i, _flat(iq, ip - 1, npp), -c_p / (2.0 * dp))
            # mixed: central q of central p
            add(i, _flat(qr, ip + 1, npp), c_pq / (4.0 * dq * dp))
            add(i, _flat(qr, ip - 1, npp), -c_pq / (4.0 * dq * dp))
            add(i, _flat(ql, ip + 1, npp), -c_pq / (4.0 * dq * dp))
            add(i, _flat(ql, ip - 1, npp), c_pq / (4.0 * dq * dp))
            # local h
            add(i, i, c_0)
        # bottom Dirichlet row
        i0 = _flat(iq, 0, npp)
        add(i0, i0, 1.0)
        # Venttsel top row
        it = _flat(iq, N_p, npp)
        hq_t, hqq_t, hp_t = hq[iq, -1], hqq[iq, -1], hp[iq, -1]
        slope = 1.0 + hq_t ** 2
        kappa = -hqq_t / slope ** 1.5
        c_q = (2.0 * hq_t
               + hp_t ** 2 * 2.0 * sigma * 3.0 * hqq_t * hq_t / slope ** 2.5)
        c_qq = -hp_t ** 2 * 2.0 * sigma / slope ** 1.5
        c_p = 2.0 * hp_t * (2.0 * sigma * kappa + 2.0 * g_rho0 * hf.h[iq, -1]
                            - hf.Q)
        c_0 = hp_t ** 2 * 2.0 * g_rho0
        add(it, _flat(qr, N_p, npp), c_q / (2.0 * dq) + c_qq / dq ** 2)
        add(it, _flat(ql, N_p, npp), -c_q / (2.0 * dq) + c_qq / dq ** 2)
        add(it, it, -2.0 * c_qq / dq ** 2)
        add(it, it, c_p * 3.0 / (2.0 * dp) + c_0)
        add(it, _flat(iq, N_p - 1, npp), -c_p * 4.0 / (2.0 * dp))
        add(it, _flat(iq, N_p - 2, npp), c_p * 1.0 / (2.0 * dp))

    # rank-one depth coupling: interior rows react to d(h) = w . h_top
    u = np.zeros(n)
    for iq in range(N_q + 1):
        for ip in range(1, N_p):
            u[_flat(iq, ip, npp)] = g * rho_p[ip] * hp[iq, ip] ** 3
    w = mean_weights(N_q)
    v = np.zeros(n)
    for iq in range(N_q + 1):
        v[_flat(iq, N_p, npp)] = w[iq]

    q_col = np.zeros(n)
    for iq in range(N_q + 1):
        q_col[_flat(iq, N_p, npp)] = -hp[iq, -1] ** 2

    return JacobianRecord(ab=ab, bandwidth=kl, u=u, v=v, q_col=q_col,
                          shape=(n, n))


def _solve_with_rank_one(jac: JacobianRecord, rhs_list):
    """Solve (Band + u v^T) x = b for each b by Sherman-Morrison."""
    kl = ku = jac.bandwidth
    B = np.column_stack(rhs_list + [jac.u])
    X = solve_banded((kl, ku), jac.ab, B)
    xu = X[:, -1]
    denom = 1.0 + float(jac.v @ xu)
    if abs(denom) < 1e-300:
        raise NewtonFailureError("Sherman-Morrison denominator vanished")
    out = []
    for k in range(len(rhs_list)):
        xb = X[:, k]
        out.append(xb - xu * (float(jac.v @ xb) / denom))
    return out


def _bordered_solve(jac: JacobianRecord, rhs, cols, rows, smat, cons):
    """Block elimination for the bordered system

        [ J    C ] [dh]   [rhs ]
        [ R    S ] [dz] = [-cons],

    J applied through the banded/rank-one record, C the extra columns,
    R the border rows, S their couplings to the extra unknowns.
    """
    sols = _solve_with_rank_one(jac, [rhs] + list(cols))
    y0, csols = sols[0], sols[1:]
    k = len(rows)
    M = np.empty((k, k))
    b = np.empty(k)
    for i, row in enumerate(rows):
        for j in range(k):
            M[i, j] = smat[i][j] - float(row @ csols[j])
        b[i] = -cons[i] - float(row @ y0)
    try:
        dz = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise NewtonFailureError(f"bordered system singular: {exc}")
    dh = y0.copy()
    for j in range(k):
        dh -= dz[j] * csols[j]
    return dh, dz


def _amplitude_row(hf: HeightField):
    n = (hf.N_q + 1) * (hf.pgrid.N_p + 1)
    row = np.zeros(n)
    npp = hf.pgrid.N_p + 1
    row[_flat(0, hf.pgrid.N_p, npp)] = 0.5
    row[_flat(hf.N_q, hf.pgrid.N_p, npp)] = -0.5
    return row


@dataclass(frozen=True)
class TransverseGuard:
    """Second border pinning the transverse null mode of a double point.

    ``row`` is the left-null functional of the companion Fourier block
    (exactly orthogonal to the Jacobian range at any laminar state, and
    zero on every q-independent field), ``col`` the right null direction
    used as the unfolding column; the unfolding unknown vanishes at
    genuine solutions on the guarded curve.
    """

    row: np.ndarray
    col: np.ndarray
    n: int
    target: float = 0.0


def newton(physics: Physics, hf: HeightField, sigma: float | None = None,
           frozen: str = "Q", tol: float = NEWTON_TOL,
           max_iter: int = NEWTON_MAX_ITER,
           amplitude_target: float | None = None,
           direction: np.ndarray | None = None,
           direction_target: float | None = None,
           guard: "TransverseGuard | None" = None,
           return_history: bool = False):
    """Newton's method on the discrete height equation.

    frozen = "Q": Q held fixed, h updated.  frozen = "amplitude": the
    crest-trough amplitude is constrained (to its initial value unless
    ``amplitude_target`` is given) and Q joins the unknowns through a
    border row/column.  frozen = "direction": the weighted projection of h
    onto ``direction`` is constrained instead, which pins the mode mixture
    when several branches cross (near a double point a single scalar
    amplitude cannot tell them apart).  An optional transverse ``guard``
    adds a second border annihilating the other null mode of a double
    point, with an unfolding unknown that vanishes at genuine solutions.
    Damping by step halving, at most 8 halvings.
    """
    if sigma is None:
        sigma = physics.sigma
    h = hf.h.copy()
    Q = hf.Q
    mu = 0.0
    field_now = replace(hf, h=h, Q=Q)
    r = residual(physics, field_now, sigma)
    rnorm = float(np.max(np.abs(r)))
    history = [rnorm]
    if rnorm < tol:
        accepted = replace(field_now, residual_norm=rnorm,
                           provenance=hf.provenance)
        return (accepted, history) if return_history else accepted
    if frozen == "amplitude":
        target = (amplitude_target if amplitude_target is not None
                  else field_now.amplitude())
    elif frozen == "direction":
        if direction is None:
            raise ValueError("frozen='direction' needs a direction array")
        dir_flat = direction.reshape(-1) / direction.size
        target = (direction_target if direction_target is not None
                  else float(dir_flat @ h.reshape(-1)))

    for _ in range(max_iter):
        jac = jacobian(physics, field_now, sigma)
        rhs = -(r.reshape(-1) + mu * guard.col if guard is not None
                else r.reshape(-1))
        if frozen == "Q":
            if guard is not None:
                raise ValueError("guard requires a free Q")
            (delta,) = _solve_with_rank_one(jac, [rhs])
            dz = np.zeros(0)
            dQ = dmu = 0.0
        elif frozen in ("amplitude", "direction"):
            if frozen == "amplitude":
                row = _amplitude_row(field_now)
                con = field_now.amplitude() - target
            else:
                row = dir_flat
                con = float(dir_flat @ field_now.h.reshape(-1)) - target
            cols, rows, cons = [jac.q_col], [row], [con]
            if guard is not None:
                cols.append(guard.col)
                rows.append(guard.row)
                cons.append(float(guard.row @ field_now.h.reshape(-1))
                            - guard.target)
            smat = [[0.0] * len(cols) for _ in rows]
            delta, dz = _bordered_solve(jac, rhs, cols, rows, smat, cons)
            dQ = dz[0]
            dmu = dz[1] if guard is not None else 0.0
        else:
            raise ValueError(f"unknown frozen mode {frozen!r}")

        def _augmented_norm(res, mu_val):
            if guard is None:
                return float(np.max(np.abs(res)))
            return float(np.max(np.abs(res.reshape(-1) + mu_val * guard.col)))

        aug_now = _augmented_norm(r, mu)
        scale = 1.0
        for _halving in range(MAX_HALVINGS + 1):
            trial_h = h + scale * delta.reshape(h.shape)
            trial = replace(field_now, h=trial_h, Q=Q + scale * dQ)
            try:
                r_trial = residual(physics, trial, sigma)
            except EllipticityLossError:
                scale *= 0.5
                continue
            r_trial_norm = float(np.max(np.abs(r_trial)))
            aug_trial = _augmented_norm(r_trial, mu + scale * dmu)
            if aug_trial < aug_now or r_trial_norm < tol:
                break
            scale *= 0.5
        else:
            raise NewtonFailureError(
                "Newton damping exhausted", residual=rnorm,
                iterations=len(history))
        h = trial_h
        Q = trial.Q
        mu += scale * dmu
        field_now = trial
        r = r_trial
        rnorm = r_trial_norm
        history.append(rnorm)
        if rnorm < tol:
            accepted = replace(field_now, residual_norm=rnorm,
                               provenance=hf.provenance)
            return (accepted, history) if return_history else accepted
    raise NewtonFailureError(
        f"no convergence in {max_iter} Newton iterations",
        residual=rnorm, iterations=max_iter)


def laminar_field(flow: LaminarFlow, N_q: int,
                  provenance: str = "laminar") -> HeightField:
    h = np.tile(flow.H, (N_q + 1, 1))
    return HeightField(Q=flow.Q, N_q=N_q, pgrid=flow.grid, h=h,
                       provenance=provenance)


def germ_field(flow: LaminarFlow, modes, xi, eps: float, N_q: int,
               provenance: str = "germ") -> HeightField:
    """h = H + eps sum_k xi_k M_k(p) cos(n_k q) at Q = Q(lambda_*)."""
    q = np.linspace(0.0, np.pi, N_q + 1)
    h = np.tile(flow.H, (N_q + 1, 1))
    for coef, mode in zip(xi, modes):
        if coef != 0.0:
            h += eps * coef * np.outer(np.cos(mode.n * q), mode.M)
    return HeightField(Q=flow.Q, N_q=N_q, pgrid=flow.grid, h=h,
                       provenance=provenance)


# --- discrete Fourier-block dispersion -------------------------------------

def fourier_block_dispersion(physics: Physics, flow: LaminarFlow,
                             sigma: float, n: int, N_q: int) -> float:
    """Boundary mismatch of the n-th q-Fourier block of the discrete
    Jacobian at the laminar field.

    At a laminar state the Jacobian decouples over discrete cosine modes;
    marching the block's interior rows from the bed (discrete shooting with
    v_0 = 0, v_1 = dp) and evaluating the Venttsel row gives a scalar whose
    zeros are the bifurcation points of the DISCRETE operator.  They differ
    from the continuum shooting roots by the O(dp^2, dq^2) discretization
    error, which matters when two modes must resonate at the same lambda.
    """
    grid = flow.grid
    dp = grid.h
    dq = np.pi / N_q
    kn2 = (2.0 - 2.0 * np.cos(n * dq)) / dq ** 2      # symbol of -d^2/dq^2
    p = grid.nodes
    rho_p = physics.rho_p(p)
    beta = physics.beta_at(p)
    g = physics.g
    Hp = flow.Hp
    Y = flow.Y
    v = np.zeros(grid.N_p + 1)
    v[1] = dp
    for k in range(1, grid.N_p):
        c_pp = 1.0
        c_p = -3.0 * g * Y[k] * rho_p[k] * Hp[k] ** 2 + 3.0 * Hp[k] ** 2 * beta[k]
        c_0 = -Hp[k] ** 2 * kn2 - g * rho_p[k] * Hp[k] ** 3
        # interior row: c_pp (v+ - 2 v + v-)/dp^2 + c_p (v+ - v-)/(2 dp) + c_0 v = 0
        a_plus = c_pp / dp ** 2 + c_p / (2.0 * dp)
        a_minus = c_pp / dp ** 2 - c_p / (2.0 * dp)
        a_zero = -2.0 * c_pp / dp ** 2 + c_0
        v[k + 1] = -(a_zero * v[k] + a_minus * v[k - 1]) / a_plus
        big = abs(v[k + 1])
        if big > 1e280:
            v /= big
    lam = flow.lam
    vp_top = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dp)
    g_rho0 = g * physics.rho0()
    return float(2.0 * Hp[-1] * (-lam) * vp_top
                 + (2.0 * g_rho0 * Hp[-1] ** 2
                    + 2.0 * sigma * Hp[-1] ** 2 * kn2) * v[-1])


def fourier_block_matrix(physics: Physics, flow: LaminarFlow, sigma: float,
                         n: int, N_q: int) -> np.ndarray:
    """The n-th q-Fourier block of the discrete Jacobian at the laminar
    field, as a dense (N_p+1)^2 matrix (bed row, interior rows, Venttsel
    row)."""
    grid = flow.grid
    dp = grid.h
    dq = np.pi / N_q
    kn2 = (2.0 - 2.0 * np.cos(n * dq)) / dq ** 2
    p = grid.nodes
    rho_p = physics.rho_p(p)
    beta = physics.beta_at(p)
    g = physics.g
    Hp = flow.Hp
    Y = flow.Y
    m = grid.N_p + 1
    B = np.zeros((m, m))
    B[0, 0] = 1.0
    for k in range(1, grid.N_p):
        c_p = -3.0 * g * Y[k] * rho_p[k] * Hp[k] ** 2 + 3.0 * Hp[k] ** 2 * beta[k]
        c_0 = -Hp[k] ** 2 * kn2 - g * rho_p[k] * Hp[k] ** 3
        B[k, k - 1] = 1.0 / dp ** 2 - c_p / (2.0 * dp)
        B[k, k] = -2.0 / dp ** 2 + c_0
        B[k, k + 1] = 1.0 / dp ** 2 + c_p / (2.0 * dp)
    lam = flow.lam
    g_rho0 = g * physics.rho0()
    c_p_top = 2.0 * Hp[-1] * (-lam)
    B[-1, -1] = c_p_top * 3.0 / (2.0 * dp) + 2.0 * g_rho0 * Hp[-1] ** 2 \
        + 2.0 * sigma * Hp[-1] ** 2 * kn2
    B[-1, -2] = -c_p_top * 4.0 / (2.0 * dp)
    B[-1, -3] = c_p_top / (2.0 * dp)
    return B


def build_transverse_guard(physics: Physics, flow: LaminarFlow, sigma: float,
                           n: int, N_q: int) -> TransverseGuard:
    """Guard borders from the null vectors of the mode-n Fourier block."""
    B = fourier_block_matrix(physics, flow, sigma, n, N_q)
    U, S, Vt = np.linalg.svd(B)
    right = Vt[-1]
    left = U[:, -1]
    q = np.linspace(0.0, np.pi, N_q + 1)
    wq = np.full(N_q + 1, 1.0)
    wq[0] = wq[-1] = 0.5
    row2d = np.outer(wq * np.cos(n * q), left)
    col2d = np.outer(np.cos(n * q), right)
    row = row2d.reshape(-1)
    col = col2d.reshape(-1)
    row /= np.linalg.norm(row)
    col /= np.linalg.norm(col)
    return TransverseGuard(row=row, col=col, n=n)


def discrete_lambda_star(physics: Physics, grid: PGrid, sigma: float,
                         N_q: int, n: int = 1,
                         bracket_hint: float | None = None) -> float:
    """Smallest zero of the block dispersion for mode n."""
    from scipy.optimize import brentq

    from .laminar import lambda_floor, solve_laminar

    def f(lam):
        flow = solve_laminar(physics, lam, grid)
        return fourier_block_dispersion(physics, flow, sigma, n, N_q)

    floor = lambda_floor(physics, grid)
    lo = (bracket_hint * 0.9 if bracket_hint is not None
          else floor + 1e-8 * max(1.0, abs(floor)))
    flo = f(lo)
    hi = lo
    fhi = flo
    while np.sign(fhi) == np.sign(flo):
        lo, flo = hi, fhi
        hi = max(hi * 1.3, floor + 1.3 * (hi - floor))
        if hi > 1e6:
            raise NewtonFailureError("no discrete dispersion sign change")
        fhi = f(hi)
    return float(brentq(f, lo, hi, xtol=1e-13, rtol=8.9e-16))


def discrete_double_sigma(physics: Physics, grid: PGrid, n2: int, N_q: int,
                          sigma_seed: float, lam_seed: float,
                          tol: float = 1e-11, max_iter: int = 40):
    """(sigma, lambda) where modes 1 and n2 of the discrete operator
    bifurcate together; 2-d Newton with finite-difference Jacobian."""
    from .laminar import solve_laminar

    def F(x):
        sg, lam = x
        flow = solve_laminar(physics, lam, grid)
        return np.array([
            fourier_block_dispersion(physics, flow, sg, 1, N_q),
            fourier_block_dispersion(physics, flow, sg, n2, N_q)])

    x = np.array([sigma_seed, lam_seed])
    scale = np.abs(F(x)) + 1.0
    for _ in range(max_iter):
        r = F(x)
        if np.max(np.abs(r / scale)) < tol:
            return float(x[0]), float(x[1])
        J = np.empty((2, 2))
        for j in range(2):
            step = 1e-7 * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += step
            J[:, j] = (F(xp) - r) / step
        try:
            x = x + np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonFailureError(f"discrete double-point Newton: {exc}")
    raise NewtonFailureError("discrete double-point Newton did not converge")


# --- continuation ---------------------------------------------------------

@dataclass(frozen=True)
class ContinuationControls:
    ds_min: float = 1e-9
    ds_max: float = 0.1
    max_steps: int = 500
    newton_tol: float = NEWTON_TOL
    newton_max_iter: int = 12
    delta_stop: float = 1e-3
    kappa_stop: float = 1e3
    Q_stop: float = 1e6
    tol_loop: float = 1e-4
    s_min: float = 5e-2


@dataclass(frozen=True)
class BranchPoint:
    s: float
    Q: float
    amplitude: float
    monitors: tuple       # (M1 max h_p, M2 min h_p, M3 min Venttsel coef,
                          #  M4 min surface curvature, M5 Q, M6 amplitude)
    residual_norm: float
    step: float
    field: HeightField | None


@dataclass(frozen=True)
class Branch:
    points: tuple
    termination: str


def _monitors(physics, hf, sigma):
    _, hp, _, _, _ = derivatives(hf)
    kappa = surface_curvature(hf)
    venttsel = hf.Q - 2.0 * sigma * kappa - 2.0 * physics.g * physics.rho0() * hf.top
    return (float(np.max(hp)), float(np.min(hp)), float(np.min(venttsel)),
            float(np.min(kappa)), float(hf.Q), hf.amplitude())


def _check_stops(mon, controls):
    M1, M2, M3, M4, M5, _ = mon
    if M1 > 1.0 / controls.delta_stop:
        return "StagnationApproach"
    if M2 < controls.delta_stop:
        return "VelocityBlowup"
    if M3 < controls.delta_stop:
        return "EllipticityLoss"
    if M4 < -controls.kappa_stop:
        return "CurvatureBlowup"
    if M5 > controls.Q_stop:
        # unbounded energy forces h_p -> 0 through the surface condition
        return "VelocityBlowup"
    return None


def _weighted_dot(dh, dQ, eh, eQ):
    return float(dh.ravel() @ eh.ravel()) / dh.size + dQ * eQ


def _corrector(physics, sigma, pred: HeightField, t_h, t_Q, x_prev, ds,
               controls, guard=None):
    """Newton on (G(h, Q), arclength constraint) from the predictor."""
    h = pred.h.copy()
    Q = pred.Q
    mu = 0.0
    fld = replace(pred, h=h, Q=Q)
    for it in range(1, controls.newton_max_iter + 1):
        r = residual(physics, fld, sigma)
        con = (_weighted_dot(fld.h - x_prev.h, fld.Q - x_prev.Q, t_h, t_Q)
               - ds)
        rnorm = float(np.max(np.abs(r)))
        if rnorm < controls.newton_tol and abs(con) < 1e-12 * max(1.0, ds):
            return replace(fld, residual_norm=rnorm), it
        jac = jacobian(physics, fld, sigma)
        rhs = -(r.reshape(-1) + mu * guard.col) if guard is not None \
            else -r.reshape(-1)
        row = t_h.reshape(-1) / t_h.size
        cols, rows, cons = [jac.q_col], [row], [con]
        smat = [[t_Q]]
        if guard is not None:
            cols.append(guard.col)
            rows.append(guard.row)
            cons.append(float(guard.row @ fld.h.reshape(-1)) - guard.target)
            smat = [[t_Q, 0.0], [0.0, 0.0]]
        dh, dz = _bordered_solve(jac, rhs, cols, rows, smat, cons)
        fld = replace(fld, h=fld.h + dh.reshape(fld.h.shape), Q=fld.Q + dz[0])
        if guard is not None:
            mu += dz[1]
    raise NewtonFailureError("corrector did not converge",
                             residual=rnorm, iterations=controls.newton_max_iter)


def continue_branch(physics: Physics, germ: HeightField,
                    sigma: float | None = None,
                    controls: ContinuationControls = ContinuationControls(),
                    keep_fields: bool = True,
                    guard: TransverseGuard | None = None) -> Branch:
    """Pseudo-arclength predictor-corrector from a germ field.

    Records the monitor tuple at every accepted point and stops on the
    first triggered alternative (blow-up monitors, closed loop, Newton
    failure with underflowed step, or the step budget).  ``guard`` pins
    the transverse null projection for pure branches through a double
    point, where the unguarded corrector can slide onto a mixed curve.
    """
    if sigma is None:
        sigma = physics.sigma
    # reference laminar profile: the q-mean of the germ (cosine modes
    # average to zero over the period)
    w = mean_weights(germ.N_q)
    H_row = w @ germ.h
    x_lam = replace(germ, h=np.tile(H_row, (germ.N_q + 1, 1)))

    # lock the germ's mode mixture, not just its scalar amplitude: near a
    # double point several branches share every small amplitude value
    direction = germ.h - x_lam.h
    dir_flat = direction.reshape(-1) / direction.size
    c0 = float(dir_flat @ germ.h.reshape(-1))
    c_lam = float(dir_flat @ x_lam.h.reshape(-1))
    fld0 = newton(physics, germ, sigma, frozen="direction",
                  direction=direction, direction_target=c0,
                  guard=guard, tol=controls.newton_tol)
    points = []

    def record(fld, s, ds):
        mon = _monitors(physics, fld, sigma)
        points.append(BranchPoint(
            s=s, Q=fld.Q, amplitude=fld.amplitude(), monitors=mon,
            residual_norm=fld.residual_norm, step=ds,
            field=fld if keep_fields else None))
        return mon

    mon = record(fld0, 0.0, 0.0)
    stop = _check_stops(mon, controls)
    if stop is not None:
        return Branch(points=tuple(points), termination=stop)

    # second point: double the germ deviation at the same frozen mixture
    h1_guess = replace(fld0, h=x_lam.h + 2.0 * (fld0.h - x_lam.h))
    try:
        fld1 = newton(physics, h1_guess, sigma, frozen="direction",
                      direction=direction,
                      direction_target=c_lam + 2.0 * (c0 - c_lam),
                      guard=guard, tol=controls.newton_tol)
    except (NewtonFailureError, EllipticityLossError):
        return Branch(points=tuple(points), termination="NewtonFailure")
    ds = float(np.sqrt(max(_weighted_dot(fld1.h - fld0.h, fld1.Q - fld0.Q,
                                         fld1.h - fld0.h, fld1.Q - fld0.Q),
                           1e-300)))
    ds = min(max(ds, controls.ds_min), controls.ds_max)
    s = ds
    mon = record(fld1, s, ds)
    stop = _check_stops(mon, controls)
    if stop is not None:
        return Branch(points=tuple(points), termination=stop)

    prev, curr = fld0, fld1
    termination = "MaxSteps"
    while len(points) < controls.max_steps:
        dh = curr.h - prev.h
        dQ = curr.Q - prev.Q
        norm = np.sqrt(_weighted_dot(dh, dQ, dh, dQ))
        t_h, t_Q = dh / norm, dQ / norm
        accepted = None
        while accepted is None:
            pred = replace(curr, h=curr.h + ds * t_h, Q=curr.Q + ds * t_Q)
            try:
                accepted, its = _corrector(physics, sigma, pred, t_h, t_Q,
                                           curr, ds, controls, guard=guard)
            except (NewtonFailureError, EllipticityLossError):
                ds *= 0.5
                if ds < controls.ds_min:
                    return Branch(points=tuple(points),
                                  termination="NewtonFailure")
        s += ds
        mon = record(accepted, s, ds)
        stop = _check_stops(mon, controls)
        if stop is not None:
            termination = stop
            break
        # closed-loop detection against the first corrected point
        gap = np.sqrt(_weighted_dot(accepted.h - fld0.h, accepted.Q - fld0.Q,
                                    accepted.h - fld0.h, accepted.Q - fld0.Q))
        if s > controls.s_min and gap < controls.tol_loop:
            termination = "ClosedLoop"
            break
        if its <= 3:
            ds = min(2.0 * ds, controls.ds_max)
        elif its >= 7:
            ds = max(0.5 * ds, controls.ds_min)
        prev, curr = curr, accepted
    return Branch(points=tuple(points), termination=termination)


def nodal_check(hf: HeightField, n_min: int = 1, tol: float = 1e-12) -> bool:
    """Monotone crest-to-trough profile over one minimal period.

    True iff the top trace restricted to [0, pi/n_min] decreases from the
    crest at q = 0 with h_q of a single sign in the open interior; a flat
    (laminar) trace counts as degenerate-true.
    """
    top = hf.top
    N_q = hf.N_q
    if N_q % n_min == 0:
        window = top[: N_q // n_min + 1]
    else:
        q = hf.q_nodes
        fine = np.linspace(0.0, np.pi / n_min, 129)
        window = np.interp(fine, q, top)
    scale = max(1.0, float(np.max(np.abs(top))))
    diffs = np.diff(window)
    if np.max(np.abs(diffs)) < tol * scale:
        return True
    return bool(np.all(diffs < tol * scale) and window[0] > window[-1])


# --- serialization --------------------------------------------------------

def dump_field(hf: HeightField) -> str:
    """Text grid format: header then row-major h values, 17 digits."""
    lines = [f"heightfield v1 {hf.N_q} {hf.pgrid.N_p} "
             f"{hf.pgrid.p0:.16e} {hf.Q:.16e}"]
    for iq in range(hf.N_q + 1):
        lines.append(" ".join(f"{v:.16e}" for v in hf.h[iq]))
    return "\n".join(lines) + "\n"


def load_field(text: str, provenance: str = "loaded") -> HeightField:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    if head[:2] != ["heightfield", "v1"]:
        raise ShapeError("not a heightfield v1 dump")
    N_q, N_p = int(head[2]), int(head[3])
    p0, Q = float(head[4]), float(head[5])
    rows = [np.fromstring(ln, sep=" ") for ln in lines[1:]]
    h = np.vstack(rows)
    if h.shape != (N_q + 1, N_p + 1):
        raise ShapeError(f"dump body {h.shape} does not match header")
    return HeightField(Q=Q, N_q=N_q, pgrid=PGrid(p0, N_p), h=h,
                       provenance=provenance)


def branch_csv(branch: Branch) -> str:
    lines = ["s,Q,amplitude,M1,M2,M3,M4,M5,M6,residual,step"]
    for pt in branch.points:
        vals = (pt.s, pt.Q, pt.amplitude) + pt.monitors + (pt.residual_norm,
                                                           pt.step)
        lines.append(",".join(f"{v:.16e}" for v in vals))
    return "\n".join(lines) + "\n"


def branch_svg(branches, width: int = 640, height: int = 480) -> str:
    """Amplitude-vs-Q polyline diagram, one polyline per branch."""
    pts_all = [(pt.Q, pt.amplitude) for br in branches for pt in br.points]
    if not pts_all:
        return ("<svg xmlns='http://www.w3.org/2000/svg' "
                f"width='{width}' height='{height}'/>\n")
    qs = [p[0] for p in pts_all]
    amps = [p[1] for p in pts_all]
    q_lo, q_hi = min(qs), max(qs)
    a_lo, a_hi = min(amps), max(amps)
    q_span = (q_hi - q_lo) or 1.0
    a_span = (a_hi - a_lo) or 1.0
    margin = 40

    def xmap(qv):
        return margin + (qv - q_lo) / q_span * (width - 2 * margin)

    def ymap(av):
        return height - margin - (av - a_lo) / a_span * (height - 2 * margin)

    parts = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' "
             f"height='{height}' viewBox='0 0 {width} {height}'>",
             f"<rect width='{width}' height='{height}' fill='white'/>"]
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    for k, br in enumerate(branches):
        pts = " ".join(f"{xmap(pt.Q):.2f},{ymap(pt.amplitude):.2f}"
                       for pt in br.points)
        parts.append(f"<polyline points='{pts}' fill='none' "
                     f"stroke='{colors[k % len(colors)]}' stroke-width='1.5'/>")
    parts.append(f"<text x='{margin}' y='{height - 10}' font-size='12'>"
                 f"Q in [{q_lo:.6g}, {q_hi:.6g}]</text>")
    parts.append(f"<text x='10' y='{margin - 10}' font-size='12'>"
                 f"amplitude in [{a_lo:.6g}, {a_hi:.6g}]</text>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
