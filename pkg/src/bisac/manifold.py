"""Analog beamformer design on the complex circle manifold.

The analog precoder F_RF has unit-modulus entries, so x = vec(F_RF) lives on
an N_t*N_RF dimensional complex circle. The design problem is a penalized
least-squares fit to the per-subcarrier optimal precoders,

    f(x) = x^H T1 x - 2 Re{x^H t1} + (1/2) sum_{k,n} rho_{k,n} g_{k,n}^2,
    g_{k,n}(x) = max(0, kappa_n - x^H Sigma_{k,n} x),

minimized by a Riemannian trust-region loop (truncated-CG subproblems) with
the penalty coefficients grown whenever a sensing-gain constraint stays
violated. All quadratic forms are applied matrix-free through the map
x <-> X = F_RF: T1 x = vec(X sum_k F_BB,k F_BB,k^H) and
Sigma_{k,n} x = vec(a_n (a_n^H X F_BB,k) F_BB,k^H), so T1 is never
materialized at realistic sizes.

Real-calculus convention: the ambient space is treated as R^{2 N_t N_RF}
with inner product <u, v> = Re{u^H v}. The Euclidean gradient returned here
is twice the conjugate-coordinate derivative, so the directional derivative
along an ambient direction d is exactly <grad, d>. The Hessian-vector
product is the true real Hessian (the rank-one term 4 Re{x^H Sigma d} Sigma x
from differentiating the active penalty), which is what makes the Riemannian
model second-order accurate along retraction curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadData",
    "PenaltyState",
    "TrustRegionConfig",
    "AnalogDesignResult",
    "build_quad_data",
    "dense_quadratics",
    "fit_distance",
    "constraint_gaps",
    "penalized_objective",
    "euclidean_gradient",
    "euclidean_hessian_apply",
    "tangent_project",
    "riemannian_gradient",
    "riemannian_hessian_apply",
    "retract",
    "random_circle_point",
    "tcg_solve",
    "rtr_analog_design",
    "rsd_analog_design",
]

_INIT_TAG = 0x616E6C67  # analog-design RNG stream


@dataclass(frozen=True)
class QuadData:
    """Quadratic forms of the analog design objective, stored matrix-free.

    bb_gram_total is sum_k F_BB,k F_BB,k^H (drives T1), t1_mat is
    sum_k F_opt,k F_BB,k^H (t1 = vec of it), const is sum_k ||F_opt,k||_F^2
    so that fit_distance can report the actual Euclidean distance.
    """

    f_bb: np.ndarray          # (K, N_rf, N_s)
    f_opt: np.ndarray         # (K, N_t, N_s)
    steer: np.ndarray         # (N, N_t), row n = a_n
    kappas: np.ndarray        # (N,)
    bb_gram_total: np.ndarray
    t1_mat: np.ndarray
    const: float

    @property
    def shape(self):
        return self.f_opt.shape[1], self.f_bb.shape[1]

    @property
    def dim(self):
        n_t, n_rf = self.shape
        return n_t * n_rf


@dataclass
class PenaltyState:
    """Penalty coefficients rho_{k,n} with their growth and feasibility tol.

    rho has shape (K, N); growth is the multiplier applied to every
    subcarrier row of a violated target; feas_tol is the epsilon_1 under
    which a constraint gap counts as satisfied.
    """

    rho: np.ndarray
    growth: float = 10.0
    feas_tol: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if np.any(self.rho <= 0.0):
            raise ValueError("penalty coefficients must be positive")
        if self.growth <= 1.0:
            raise ValueError("penalty growth must exceed 1")
        if self.feas_tol < 0.0:
            raise ValueError("feasibility tolerance must be nonnegative")


@dataclass(frozen=True)
class TrustRegionConfig:
    """Trust-region controls for the RTR loop.

    delta0/delta_max bound the radius, accept_threshold is the ratio above
    which a step is taken, grad_tol stops the loop, max_outer is the total
    iteration budget of one design call (shared across penalty rounds, so
    escalating rho never buys extra iterations) and max_inner_cg caps the
    CG steps per subproblem (None means the manifold dimension).
    """

    delta0: float
    delta_max: float
    accept_threshold: float = 0.1
    grad_tol: float = 1e-6
    max_outer: int = 200
    max_inner_cg: int | None = None

    def __post_init__(self):
        if not 0.0 < self.delta0 < self.delta_max:
            raise ValueError("need 0 < delta0 < delta_max")
        if not 0.0 <= self.accept_threshold < 0.25:
            raise ValueError("accept_threshold must lie in [0, 0.25)")
        if self.grad_tol <= 0.0 or self.max_outer < 1:
            raise ValueError("grad_tol must be positive, max_outer >= 1")


@dataclass
class AnalogDesignResult:
    """Outcome of an analog design run."""

    f_rf: np.ndarray
    x: np.ndarray
    feasible: bool
    objective: float
    fit: float
    gaps: np.ndarray              # (K, N) residual constraint gaps
    iterations: int
    rounds: int
    history: list = field(default_factory=list)  # (iter, f, fit, max_gap)


def _vec(M):
    return np.asarray(M).reshape(-1, order="F")


def _unvec(x, shape):
    return np.asarray(x).reshape(shape, order="F")


def _inner(u, v):
    return float(np.real(np.vdot(u, v)))


def build_quad_data(f_bb, f_opt, steer, kappas) -> QuadData:
    """Assemble the quadratic forms of the analog design objective.

    Args:
        f_bb: (K, N_rf, N_s) digital precoders.
        f_opt: (K, N_t, N_s) per-subcarrier fit targets.
        steer: (N, N_t) steering vectors of the sensing targets (rows), or a
            single length-N_t vector; may be empty (shape (0, N_t)).
        kappas: length-N gain thresholds.

    Returns:
        QuadData with the cached products.
    """
    f_bb = np.asarray(f_bb, dtype=complex)
    f_opt = np.asarray(f_opt, dtype=complex)
    steer = np.atleast_2d(np.asarray(steer, dtype=complex))
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    if f_bb.ndim != 3 or f_opt.ndim != 3:
        raise ValueError("f_bb and f_opt must be (K, rows, N_s) stacks")
    if f_bb.shape[0] != f_opt.shape[0] or f_bb.shape[2] != f_opt.shape[2]:
        raise ValueError("f_bb and f_opt disagree on K or N_s")
    if steer.size and steer.shape[1] != f_opt.shape[1]:
        raise ValueError("steering vector length must equal N_t")
    if steer.shape[0] != kappas.shape[0]:
        raise ValueError("one kappa per steering vector required")

    gram = np.einsum("krs,kms->rm", f_bb, f_bb.conj())
    t1_mat = np.einsum("kts,krs->tr", f_opt, f_bb.conj())
    const = float(np.sum(np.abs(f_opt) ** 2))
    return QuadData(f_bb, f_opt, steer, kappas, gram, t1_mat, const)


def dense_quadratics(qd: QuadData):
    """Materialized (T1, t1, sigmas) for small problems and tests.

    sigmas has shape (K, N, dim, dim). Only sensible when N_t * N_RF is
    small; the solvers never call this.
    """
    n_t, _ = qd.shape
    eye = np.eye(n_t)
    T1 = np.kron(qd.bb_gram_total.conj(), eye)
    t1 = _vec(qd.t1_mat)
    K = qd.f_bb.shape[0]
    N = qd.steer.shape[0]
    sigmas = np.zeros((K, N, qd.dim, qd.dim), dtype=complex)
    for k in range(K):
        g = qd.f_bb[k] @ qd.f_bb[k].conj().T
        for n in range(N):
            outer = np.outer(qd.steer[n], qd.steer[n].conj())
            sigmas[k, n] = np.kron(g.conj(), outer)
    return T1, t1, sigmas


def _constraint_values(X, qd):
    """Per-(k, n) transmit gains x^H Sigma_{k,n} x and the projections."""
    if qd.steer.shape[0] == 0:
        K = qd.f_bb.shape[0]
        return np.zeros((K, 0)), np.zeros((K, 0, qd.f_bb.shape[2]), dtype=complex)
    proj = qd.steer.conj() @ X                       # (N, N_rf)
    u = np.einsum("nr,krs->kns", proj, qd.f_bb)      # (K, N, N_s)
    vals = np.real(np.einsum("kns,kns->kn", u, u.conj()))
    return vals, u


def constraint_gaps(x, qd: QuadData) -> np.ndarray:
    """g_{k,n}(x) = max(0, kappa_n - x^H Sigma_{k,n} x), shape (K, N)."""
    X = _unvec(x, qd.shape)
    vals, _ = _constraint_values(X, qd)
    return np.maximum(0.0, qd.kappas[None, :] - vals)


def fit_distance(x, qd: QuadData) -> float:
    """Sum_k ||F_opt,k - F_RF F_BB,k||_F^2 at x."""
    X = _unvec(x, qd.shape)
    quad = _inner(x, _vec(X @ qd.bb_gram_total))
    cross = _inner(x, _vec(qd.t1_mat))
    return qd.const + quad - 2.0 * cross


def penalized_objective(x, qd: QuadData, ps: PenaltyState) -> float:
    """f(x) = x^H T1 x - 2 Re{x^H t1} + (1/2) sum rho g^2."""
    X = _unvec(x, qd.shape)
    quad = _inner(x, _vec(X @ qd.bb_gram_total))
    cross = _inner(x, _vec(qd.t1_mat))
    vals, _ = _constraint_values(X, qd)
    g = np.maximum(0.0, qd.kappas[None, :] - vals)
    return quad - 2.0 * cross + 0.5 * float(np.sum(ps.rho * g * g))


def euclidean_gradient(x, qd: QuadData, ps: PenaltyState) -> np.ndarray:
    """Ambient gradient 2 T1 x - 2 t1 + sum rho q_{k,n}.

    The piecewise penalty term is q = 2 (x^H Sigma x - kappa) Sigma x on the
    active branch (gain below threshold) and zero otherwise. Directional
    derivative along ambient d equals Re{d^H grad}.
    """
    X = _unvec(x, qd.shape)
    grad_mat = 2.0 * (X @ qd.bb_gram_total - qd.t1_mat)
    vals, u = _constraint_values(X, qd)
    if u.shape[1]:
        g = np.maximum(0.0, qd.kappas[None, :] - vals)
        coef = -2.0 * ps.rho * g                      # (K, N)
        rows = np.einsum("kn,kns,krs->nr", coef, u, qd.f_bb.conj())
        grad_mat = grad_mat + qd.steer.T @ rows
    return _vec(grad_mat)


def euclidean_hessian_apply(x, d, qd: QuadData, ps: PenaltyState) -> np.ndarray:
    """True real Hessian of f at x applied to the ambient direction d.

    Active-branch penalty contribution per (k, n):

        rho (4 Re{x^H Sigma d} Sigma x - 2 g Sigma d),

    a symmetric rank-one-plus-scaled-Sigma real operator. The branch is
    picked by the same test as the gradient (strictly violated constraints).
    """
    X = _unvec(x, qd.shape)
    D = _unvec(d, qd.shape)
    out = 2.0 * (D @ qd.bb_gram_total)
    vals, u = _constraint_values(X, qd)
    if u.shape[1]:
        g = np.maximum(0.0, qd.kappas[None, :] - vals)
        active = g > 0.0
        if np.any(active):
            proj_d = qd.steer.conj() @ D
            v = np.einsum("nr,krs->kns", proj_d, qd.f_bb)
            cross = np.real(np.einsum("kns,kns->kn", u, v.conj()))
            coef_u = np.where(active, 4.0 * ps.rho * cross, 0.0)
            coef_v = np.where(active, -2.0 * ps.rho * g, 0.0)
            mix = coef_u[:, :, None] * u + coef_v[:, :, None] * v
            rows = np.einsum("kns,krs->nr", mix, qd.f_bb.conj())
            out = out + qd.steer.T @ rows
    return _vec(out)


def tangent_project(x, u) -> np.ndarray:
    """Project an ambient vector onto the tangent space of the circle at x."""
    return u - np.real(u * np.conj(x)) * x


def riemannian_gradient(x, euclid_grad) -> np.ndarray:
    """Tangent projection of the ambient gradient."""
    return tangent_project(x, euclid_grad)


def riemannian_hessian_apply(x, d, qd: QuadData, ps: PenaltyState,
                             euclid_grad=None) -> np.ndarray:
    """Riemannian Hessian at x along the tangent vector d.

    Proj_x(hess_f(x) d - Re{grad_f(x) conj(x)} d) with the Euclidean pieces
    applied matrix-free; the correction term is the circle's Weingarten map.
    """
    if euclid_grad is None:
        euclid_grad = euclidean_gradient(x, qd, ps)
    ambient = euclidean_hessian_apply(x, d, qd, ps)
    ambient = ambient - np.real(euclid_grad * np.conj(x)) * d
    return tangent_project(x, ambient)


def retract(x, d) -> np.ndarray:
    """Entrywise normalization retraction (x + d) / |x + d|."""
    y = x + d
    mag = np.abs(y)
    if np.any(mag < 1e-14):
        raise ValueError("retraction singularity: step passes through zero")
    return y / mag


def tcg_solve(x, grad, hess_apply, radius, max_iters=None):
    """Steihaug-Toint truncated CG for the trust-region subproblem.

    Minimizes m(d) = <grad, d> + 0.5 <d, H d> over ||d|| <= radius, stopping
    at the boundary, at negative curvature, or once the residual drops under
    0.1 * min(||grad||, ||grad||^1.5). The returned step never does worse
    than the Cauchy point.

    Args:
        x: current point (unused algebraically; fixes the tangent space).
        grad: Riemannian gradient at x.
        hess_apply: callable mapping a tangent vector to Hess[d].
        radius: trust-region radius.
        max_iters: CG iteration cap (default: ambient dimension).

    Returns:
        (d, hit_boundary) with ||d|| <= radius.
    """
    if radius <= 0.0:
        raise ValueError("trust-region radius must be positive")
    n = grad.shape[0]
    if max_iters is None:
        max_iters = 2 * n
    d = np.zeros_like(grad)
    r = grad.copy()
    p = -r
    g_norm = np.sqrt(_inner(grad, grad))
    if g_norm == 0.0:
        return d, False
    tol = 0.1 * min(g_norm, g_norm ** 1.5)
    rr = _inner(r, r)
    d_norm_sq = 0.0

    for _ in range(max_iters):
        Hp = hess_apply(p)
        pHp = _inner(p, Hp)
        dp = _inner(d, p)
        pp = _inner(p, p)
        if pHp <= 0.0:
            sigma = _boundary_step(dp, pp, d_norm_sq, radius)
            return d + sigma * p, True
        alpha = rr / pHp
        d_next_sq = d_norm_sq + 2.0 * alpha * dp + alpha * alpha * pp
        if d_next_sq >= radius * radius:
            sigma = _boundary_step(dp, pp, d_norm_sq, radius)
            return d + sigma * p, True
        d = d + alpha * p
        d_norm_sq = d_next_sq
        r = r + alpha * Hp
        rr_next = _inner(r, r)
        if np.sqrt(rr_next) <= tol:
            return d, False
        p = -r + (rr_next / rr) * p
        rr = rr_next
    return d, False


def _boundary_step(dp, pp, dd, radius):
    disc = dp * dp + pp * (radius * radius - dd)
    return (-dp + np.sqrt(max(disc, 0.0))) / pp


def _default_config(dim):
    scale = np.sqrt(float(dim))
    return TrustRegionConfig(delta0=0.1 * scale, delta_max=scale)


def _default_penalty(qd: QuadData) -> PenaltyState:
    K = qd.f_bb.shape[0]
    N = qd.steer.shape[0]
    if N == 0:
        return PenaltyState(np.ones((K, 0)), growth=10.0, feas_tol=0.0)
    safe = np.where(qd.kappas > 0.0, qd.kappas, 1.0)
    rho = np.tile(1.0 / safe ** 2, (K, 1))
    pos = qd.kappas[qd.kappas > 0.0]
    tol = 1e-3 * float(pos.min()) if pos.size else 0.0
    return PenaltyState(rho, growth=10.0, feas_tol=tol)


def random_circle_point(dim, seed):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _INIT_TAG]))
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, dim))


def _rtr_loop(x, qd, ps, cfg, history, it_offset, max_steps):
    """One trust-region descent at fixed penalties; returns (x, iterations)."""
    delta = cfg.delta0
    f_cur = penalized_objective(x, qd, ps)
    egrad = euclidean_gradient(x, qd, ps)
    grad = riemannian_gradient(x, egrad)
    iters = 0
    for _ in range(max(0, max_steps)):
        g_norm = np.sqrt(_inner(grad, grad))
        if g_norm <= cfg.grad_tol:
            break
        hess = lambda d: riemannian_hessian_apply(x, d, qd, ps, egrad)
        step, boundary = tcg_solve(x, grad, hess, delta, cfg.max_inner_cg)
        model_dec = -(_inner(grad, step) + 0.5 * _inner(step, hess(step)))
        try:
            x_try = retract(x, step)
        except ValueError:
            delta *= 0.25
            iters += 1
            continue
        f_try = penalized_objective(x_try, qd, ps)
        if model_dec <= 0.0:
            ratio = -np.inf
        else:
            ratio = (f_cur - f_try) / model_dec
        if ratio < 0.25:
            delta *= 0.25
        elif ratio > 0.75 and boundary:
            delta = min(2.0 * delta, cfg.delta_max)
        if ratio > cfg.accept_threshold:
            x = x_try
            f_cur = f_try
            egrad = euclidean_gradient(x, qd, ps)
            grad = riemannian_gradient(x, egrad)
        iters += 1
        history.append((it_offset + iters, f_cur, fit_distance(x, qd),
                        float(constraint_gaps(x, qd).max(initial=0.0))))
        if delta < 1e-14:
            break
    return x, iters


def rtr_analog_design(f_bb, f_opt, steer, kappas, cfg=None, penalty=None,
                      seed=0, rounds=30) -> AnalogDesignResult:
    """Riemannian trust-region design of the analog precoder.

    Starts from random phases, runs the trust-region loop to stationarity
    at the current penalties, then grows rho on every target whose gain
    constraint is still violated beyond feas_tol and repeats. All penalty
    rounds share the cfg.max_outer iteration budget. Exhausting either the
    round cap or the budget with violated constraints returns the last
    iterate flagged infeasible.

    Args:
        f_bb: (K, N_rf, N_s) digital precoders.
        f_opt: (K, N_t, N_s) fit targets.
        steer: (N, N_t) target steering vectors (rows); may be empty.
        kappas: length-N transmit-gain thresholds.
        cfg: TrustRegionConfig; scale-aware defaults when None.
        penalty: PenaltyState; defaults to rho = 1/kappa^2, growth 10,
            feas_tol = 1e-3 * min positive kappa.
        seed: phase-initialization seed.
        rounds: penalty update cap.

    Returns:
        AnalogDesignResult with the unit-modulus F_RF.
    """
    qd = build_quad_data(f_bb, f_opt, steer, kappas)
    if cfg is None:
        cfg = _default_config(qd.dim)
    ps = _default_penalty(qd) if penalty is None else penalty
    x = random_circle_point(qd.dim, seed)
    history = []
    total = 0
    used_rounds = 0
    feasible = bool(np.all(constraint_gaps(x, qd) <= ps.feas_tol))
    for rnd in range(max(1, rounds)):
        x, iters = _rtr_loop(x, qd, ps, cfg, history, total,
                             cfg.max_outer - total)
        total += iters
        used_rounds = rnd + 1
        gaps = constraint_gaps(x, qd)
        violated = gaps.max(axis=0) > ps.feas_tol if gaps.size else np.zeros(0, bool)
        feasible = not bool(np.any(violated))
        if feasible or total >= cfg.max_outer:
            break
        ps.rho[:, violated] *= ps.growth
    gaps = constraint_gaps(x, qd)
    return AnalogDesignResult(
        f_rf=_unvec(x, qd.shape),
        x=x,
        feasible=feasible,
        objective=penalized_objective(x, qd, ps),
        fit=fit_distance(x, qd),
        gaps=gaps,
        iterations=total,
        rounds=used_rounds,
        history=history,
    )


def rsd_analog_design(f_bb, f_opt, steer, kappas, cfg=None, penalty=None,
                      seed=0, rounds=30, max_iters=None) -> AnalogDesignResult:
    """Riemannian steepest-descent baseline on the same penalized objective.

    Backtracking line search (Armijo constant 1e-4, step halving) along the
    negative Riemannian gradient, with the same penalty outer loop and the
    same shared iteration budget (max_iters, defaulting to cfg.max_outer)
    as the trust-region designer. Kept as a reference point; it stalls on
    tight constraints where the trust-region loop does not.
    """
    qd = build_quad_data(f_bb, f_opt, steer, kappas)
    if cfg is None:
        cfg = _default_config(qd.dim)
    ps = _default_penalty(qd) if penalty is None else penalty
    if max_iters is None:
        max_iters = cfg.max_outer
    x = random_circle_point(qd.dim, seed)
    history = []
    total = 0
    used_rounds = 0
    feasible = bool(np.all(constraint_gaps(x, qd) <= ps.feas_tol))
    for rnd in range(max(1, rounds)):
        f_cur = penalized_objective(x, qd, ps)
        iters = 0
        for _ in range(max(0, max_iters - total)):
            grad = riemannian_gradient(x, euclidean_gradient(x, qd, ps))
            g_sq = _inner(grad, grad)
            if np.sqrt(g_sq) <= cfg.grad_tol:
                break
            step = 1.0
            improved = False
            for _ in range(60):
                try:
                    x_try = retract(x, -step * grad)
                except ValueError:
                    step *= 0.5
                    continue
                f_try = penalized_objective(x_try, qd, ps)
                if f_try <= f_cur - 1e-4 * step * g_sq:
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
            x, f_cur = x_try, f_try
            iters += 1
            history.append((total + iters, f_cur, fit_distance(x, qd),
                            float(constraint_gaps(x, qd).max(initial=0.0))))
        total += iters
        used_rounds = rnd + 1
        gaps = constraint_gaps(x, qd)
        violated = gaps.max(axis=0) > ps.feas_tol if gaps.size else np.zeros(0, bool)
        feasible = not bool(np.any(violated))
        if feasible or total >= max_iters:
            break
        ps.rho[:, violated] *= ps.growth
    gaps = constraint_gaps(x, qd)
    return AnalogDesignResult(
        f_rf=_unvec(x, qd.shape),
        x=x,
        feasible=feasible,
        objective=penalized_objective(x, qd, ps),
        fit=fit_distance(x, qd),
        gaps=gaps,
        iterations=total,
        rounds=used_rounds,
        history=history,
    )
