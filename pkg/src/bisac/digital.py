"""Per-subcarrier digital beamformer via SCA, plus the joint alternation.

Given a fixed analog precoder F_RF, each subcarrier solves

    min_f  f^H R1 f - 2 Re{f^H R2 f_opt}
    s.t.   f^H R3_n f >= kappa_n  for every sensing target n,

with f = vec(F_BB,k), R1 = I kron F_RF^H F_RF, R2 = I kron F_RF^H and
R3_n = I kron (F_RF^H a_n)(a_n^H F_RF). The quadratic constraint is concave
in the wrong direction, so it is successively replaced by its tangent
minorant at the current iterate (exact at the point, below the quadratic
everywhere else); each convex subproblem is a dense QP with at most N affine
constraints, solved by enumerating active sets through the KKT conditions.

rtr_sca_design alternates these per-subcarrier solves with the Riemannian
trust-region analog design and finishes with the exact per-subcarrier power
normalization. The normalization can shave the sensing-gain margin slightly,
which is why downstream checks allow a few percent of position-error-bound
slack rather than re-solving.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrayGeometry, SubcarrierGrid, steering_vector
from .channel import HybridBeamformer, PathParams, SensingScene, optimal_digital_beamformer
from .manifold import (
    TrustRegionConfig,
    random_circle_point,
    rsd_analog_design,
    rtr_analog_design,
)
from .peb import kappa_threshold

__all__ = [
    "QpData",
    "ScaConfig",
    "JointDesignResult",
    "build_qp_data",
    "sca_linearize",
    "qp_solve",
    "sca_digital_design",
    "rtr_sca_design",
    "normalize_power",
]


@dataclass(frozen=True)
class QpData:
    """Quadratic forms of one subcarrier's digital design problem."""

    r1: np.ndarray            # (d, d) Hermitian PSD, d = N_rf * N_s
    r2: np.ndarray            # (d, N_t * N_s)
    r3: np.ndarray            # (N, d, d) Hermitian PSD stack
    f_opt: np.ndarray         # vec(F_opt,k)

    @property
    def linear_term(self):
        return self.r2 @ self.f_opt


@dataclass(frozen=True)
class ScaConfig:
    """SCA loop controls: objective-change stop, iteration cap, KKT tol."""

    tol: float = 1e-6
    max_iters: int = 50
    qp_tol: float = 1e-8

    def __post_init__(self):
        if self.tol <= 0.0 or self.max_iters < 1 or self.qp_tol <= 0.0:
            raise ValueError("tol, qp_tol must be positive and max_iters >= 1")


def build_qp_data(f_rf, f_opt_k, steer) -> QpData:
    """Materialize (R1, R2, R3, f_opt) for one subcarrier.

    Args:
        f_rf: (N_t, N_rf) analog precoder.
        f_opt_k: (N_t, N_s) fit target at this subcarrier.
        steer: (N, N_t) target steering vectors; may be empty.

    Returns:
        QpData (dimensions are tiny; dense storage is deliberate).
    """
    f_rf = np.asarray(f_rf, dtype=complex)
    f_opt_k = np.asarray(f_opt_k, dtype=complex)
    steer = np.atleast_2d(np.asarray(steer, dtype=complex))
    if f_rf.ndim != 2 or f_opt_k.ndim != 2 or f_rf.shape[0] != f_opt_k.shape[0]:
        raise ValueError("f_rf and f_opt_k must share the antenna dimension")
    n_s = f_opt_k.shape[1]
    eye = np.eye(n_s)
    r1 = np.kron(eye, f_rf.conj().T @ f_rf)
    r2 = np.kron(eye, f_rf.conj().T)
    if steer.size:
        u = steer.conj() @ f_rf                     # (N, N_rf)
        r3 = np.stack([np.kron(eye, np.outer(un.conj(), un)) for un in u])
    else:
        d = n_s * f_rf.shape[1]
        r3 = np.zeros((0, d, d), dtype=complex)
    return QpData(r1, r2, r3, f_opt_k.reshape(-1, order="F"))


def sca_linearize(f_current, r3_n, kappa):
    """Tangent minorant of the quadratic gain constraint at f_current.

    Returns (w, b) describing Re{f^H w} >= b. Because R3 is PSD, any f
    meeting the affine constraint also meets f^H R3 f >= kappa.
    """
    w = 2.0 * (r3_n @ f_current)
    b = float(kappa + np.real(np.vdot(f_current, r3_n @ f_current)))
    return w, b


def _realify_hermitian(M):
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def _realify(v):
    return np.concatenate([v.real, v.imag])


def _complexify(z):
    d = z.shape[0] // 2
    return z[:d] + 1j * z[d:]


def qp_solve(qp: QpData, constraints, qp_tol=1e-8):
    """Solve the convex per-subcarrier QP with <= N affine constraints.

    Minimizes f^H R1 f - 2 Re{f^H R2 f_opt} subject to Re{f^H w_i} >= b_i,
    by trying active sets in order of size: the unconstrained minimizer
    first, then every KKT system with a subset of constraints held at
    equality, accepting the first solution that is primal feasible with
    nonnegative multipliers. R1 is ridge-regularized by 1e-10 to keep the
    stationarity system well posed.

    Args:
        qp: QpData for this subcarrier.
        constraints: iterable of (w, b) pairs from sca_linearize.
        qp_tol: KKT residual tolerance.

    Returns:
        Complex digital vector f.

    Raises:
        ValueError: if no active set yields a KKT point ("SCA infeasible
            at iterate"), e.g. a zero normal with positive offset.
    """
    d = qp.r1.shape[0]
    Q = _realify_hermitian(qp.r1 + 1e-10 * np.eye(d))
    c = _realify(qp.linear_term)

    rows, offs = [], []
    for w, b in constraints:
        wr = _realify(np.asarray(w, dtype=complex))
        if np.linalg.norm(wr) < 1e-14:
            if b > qp_tol:
                raise ValueError(
                    "SCA infeasible at iterate: constraint normal vanished"
                )
            continue
        rows.append(wr)
        offs.append(float(b))
    A = np.array(rows) if rows else np.zeros((0, 2 * d))
    b_vec = np.array(offs)
    m = A.shape[0]
    scale = max(1.0, np.abs(b_vec).max(initial=0.0), np.linalg.norm(c))

    for size in range(m + 1):
        for subset in itertools.combinations(range(m), size):
            S = list(subset)
            kkt = np.zeros((2 * d + size, 2 * d + size))
            kkt[: 2 * d, : 2 * d] = 2.0 * Q
            rhs = np.concatenate([2.0 * c, b_vec[S]])
            if size:
                kkt[: 2 * d, 2 * d:] = -A[S].T
                kkt[2 * d:, : 2 * d] = A[S]
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[: 2 * d], sol[2 * d:]
            if size and lam.min() < -qp_tol * scale:
                continue
            if m and (A @ z - b_vec).min() < -qp_tol * scale:
                continue
            resid = 2.0 * Q @ z - 2.0 * c - (A[S].T @ lam if size else 0.0)
            if np.abs(resid).max() > qp_tol * scale * 10.0:
                continue
            return _complexify(z)
    raise ValueError("SCA infeasible at iterate: no KKT-consistent active set")


def _feasible_init(f_rf, steer, kappas, n_rf, n_s):
    """Positioning-aligned start: stream n carries sqrt(1.05 kappa_n) toward
    target n through the analog array, guaranteeing strict feasibility."""
    F0 = np.zeros((n_rf, n_s), dtype=complex)
    for n, kap in enumerate(kappas):
        if kap <= 0.0:
            continue
        u = f_rf.conj().T @ steer[n]
        nrm = np.linalg.norm(u) ** 2
        if nrm < 1e-12:
            raise ValueError(
                "SCA infeasible at iterate: steering vector orthogonal to "
                "the analog beamformer range"
            )
        F0[:, n] = np.sqrt(1.05 * kap) * u / nrm
    return F0.reshape(-1, order="F")


def sca_digital_design(f_rf, f_opt_k, steer, kappas, cfg=None, f_init=None,
                       trace=None):
    """Digital beamformer for one subcarrier by successive convexification.

    Starts from a feasible positioning-aligned point (or f_init), then
    repeats: linearize every active-target constraint at the iterate, solve
    the convex QP, stop once the objective change drops below cfg.tol. The
    objective is nonincreasing and every iterate satisfies the true
    quadratic constraints thanks to the minorant property.

    Args:
        f_rf: (N_t, N_rf) analog precoder.
        f_opt_k: (N_t, N_s) optimal fully digital precoder at subcarrier k.
        steer: (N, N_t) target steering vectors.
        kappas: length-N gain thresholds (entries <= 0 are inactive).
        cfg: ScaConfig.
        f_init: optional feasible starting vector, length N_rf * N_s.
        trace: optional list; the objective after each QP solve is appended.

    Returns:
        (N_rf, N_s) digital precoder.
    """
    cfg = cfg or ScaConfig()
    f_rf = np.asarray(f_rf, dtype=complex)
    steer = np.atleast_2d(np.asarray(steer, dtype=complex))
    n_rf = f_rf.shape[1]
    n_s = np.asarray(f_opt_k).shape[1]
    kappas = np.atleast_1d(np.asarray(kappas, dtype=float))
    if steer.shape[0] != kappas.shape[0] and steer.size:
        raise ValueError("one kappa per steering vector required")
    qp = build_qp_data(f_rf, f_opt_k, steer)
    active = [n for n in range(qp.r3.shape[0]) if kappas[n] > 0.0]

    if not active:
        f = qp_solve(qp, [], cfg.qp_tol)
        if trace is not None:
            trace.append(_qp_objective(qp, f))
        return f.reshape(n_rf, n_s, order="F")

    f = np.asarray(f_init, dtype=complex).reshape(-1) if f_init is not None \
        else _feasible_init(f_rf, steer, kappas, n_rf, n_s)
    obj = _qp_objective(qp, f)
    for _ in range(cfg.max_iters):
        cons = [sca_linearize(f, qp.r3[n], kappas[n]) for n in active]
        f = qp_solve(qp, cons, cfg.qp_tol)
        new_obj = _qp_objective(qp, f)
        if trace is not None:
            trace.append(new_obj)
        if abs(new_obj - obj) <= cfg.tol:
            obj = new_obj
            break
        obj = new_obj
    return f.reshape(n_rf, n_s, order="F")


def _qp_objective(qp: QpData, f):
    return float(np.real(np.vdot(f, qp.r1 @ f)) - 2.0 * np.real(np.vdot(f, qp.linear_term)))


def normalize_power(f_rf, f_bb, num_streams):
    """Scale each digital matrix so that ||F_RF F_BB,k||_F^2 = N_s exactly."""
    f_bb = np.asarray(f_bb, dtype=complex)
    out = np.empty_like(f_bb)
    for k in range(f_bb.shape[0]):
        nrm = np.linalg.norm(f_rf @ f_bb[k])
        if nrm == 0.0:
            raise ValueError("cannot normalize a zero beamformer")
        out[k] = np.sqrt(num_streams) * f_bb[k] / nrm
    return out


@dataclass
class JointDesignResult:
    """Outcome of the alternating joint design."""

    beamformer: HybridBeamformer
    feasible: bool
    fit: float                       # final Euclidean distance to F_opt
    kappas: np.ndarray
    steer: np.ndarray
    rounds: int
    history: list = field(default_factory=list)   # (round, fit, feasible)
    analog_iterations: int = 0


def rtr_sca_design(
    channels,
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    toi_paths: list[PathParams],
    gamma_peb,
    num_streams: int,
    num_rf: int,
    sca_cfg: ScaConfig | None = None,
    tr_cfg: TrustRegionConfig | None = None,
    seed: int = 0,
    rounds: int = 30,
    round_tol: float = 1e-4,
    analog: str = "rtr",
) -> JointDesignResult:
    """Joint hybrid design: alternate per-subcarrier SCA and analog descent.

    The sensing requirement gamma_peb is converted per target into a
    transmit-gain floor kappa_n, enforced in both phases. Each analog stage
    restarts from its own random phases (the penalty loop must re-establish
    feasibility every round, which is where the trust-region and
    steepest-descent variants separate). After the alternation converges
    (relative fit change < round_tol or the round cap) the last digital
    design is scaled to per-subcarrier power N_s against the final analog
    precoder.

    Args:
        channels: (K, N_r^c, N_t) communication channel matrices.
        scene: sensing link budget and geometry.
        grid: subcarrier layout.
        tx_geom: transmit array; rx_geom: sensing receive array.
        toi_paths: PathParams of each target of interest (may be empty).
        gamma_peb: PEB target in meters; None or inf disables the
            sensing constraints.
        num_streams: N_s; num_rf: N_RF.
        sca_cfg / tr_cfg: phase controls.
        seed: analog phase-initialization seed.
        rounds: alternation cap; round_tol: relative fit change stop.
        analog: "rtr" or "rsd" (baseline analog phase).

    Returns:
        JointDesignResult; .feasible reflects the analog penalty loop and
        the final digital pass.
    """
    channels = np.asarray(channels, dtype=complex)
    K = grid.num_subcarriers
    n_t = tx_geom.num_elements
    if channels.shape[0] != K or channels.shape[2] != n_t:
        raise ValueError("channel stack must be (K, N_r^c, N_t)")
    if not num_streams <= num_rf <= n_t:
        raise ValueError("need N_s <= N_RF <= N_t")
    toi_paths = list(toi_paths)
    if len(toi_paths) > num_streams:
        raise ValueError("more targets than streams is unsupported")
    if analog not in ("rtr", "rsd"):
        raise ValueError(f"unknown analog method {analog!r}")

    f_opt = np.stack(
        [optimal_digital_beamformer(channels[k], num_streams) for k in range(K)]
    )

    unconstrained = (
        gamma_peb is None or not np.isfinite(gamma_peb) or not toi_paths
    )
    if unconstrained:
        steer = np.zeros((0, n_t), dtype=complex)
        kappas = np.zeros(0)
    else:
        steer = np.stack([steering_vector(tx_geom, p.departure) for p in toi_paths])
        kappas = np.array(
            [
                kappa_threshold(p, scene, grid, tx_geom, rx_geom,
                                num_streams, gamma_peb)
                for p in toi_paths
            ]
        )
        if not np.all(np.isfinite(kappas)):
            raise ValueError("PEB target unreachable: singular target geometry")

    designer = rtr_analog_design if analog == "rtr" else rsd_analog_design
    # one child seed per analog invocation (index 0 seeds the pre-loop F_RF
    # that the first digital pass needs), so every analog stage restarts
    # from its own random phases yet the whole design stays deterministic
    child = np.random.SeedSequence(int(seed)).generate_state(max(1, rounds) + 1)
    x = random_circle_point(n_t * num_rf, int(child[0]))
    fit_prev = np.inf
    history = []
    feasible = True
    analog_iters = 0
    used = 0
    f_bb = None
    for rnd in range(1, max(1, rounds) + 1):
        f_rf = x.reshape(n_t, num_rf, order="F")
        f_bb = np.stack(
            [
                sca_digital_design(f_rf, f_opt[k], steer, kappas, sca_cfg)
                for k in range(K)
            ]
        )
        res = designer(f_bb, f_opt, steer, kappas, cfg=tr_cfg,
                       seed=int(child[rnd]))
        x = res.x
        analog_iters += res.iterations
        feasible = res.feasible
        used = rnd
        history.append((rnd, res.fit, bool(res.feasible)))
        if np.isfinite(fit_prev) and abs(fit_prev - res.fit) <= round_tol * max(
            fit_prev, 1e-300
        ):
            break
        fit_prev = res.fit

    f_rf = x.reshape(n_t, num_rf, order="F")
    f_bb = normalize_power(f_rf, f_bb, num_streams)
    bf = HybridBeamformer(analog=f_rf, digital=f_bb, feasible=feasible)
    fit_final = float(
        sum(
            np.linalg.norm(f_opt[k] - f_rf @ f_bb[k]) ** 2 for k in range(K)
        )
    )
    return JointDesignResult(
        beamformer=bf,
        feasible=feasible,
        fit=fit_final,
        kappas=kappas,
        steer=steer,
        rounds=used,
        history=history,
        analog_iterations=analog_iters,
    )
