"""Position error bound analytics for bistatic OFDM sensing.

Everything in this module is closed-form. For one sensing path the observable
parameter vector is

    xi = [theta_r, phi_r, theta_t, phi_t, tau, beta_re, beta_im]

(arrival angles, departure angles, delay, complex gain). The Fisher
information of xi under the OFDM observation model factors into transmit-side
beamforming gains and receive-side steering-derivative inner products, which
is what makes per-target beamforming constraints tractable: a position error
target Gamma translates into a floor kappa on the transmit gain
a^H F_k F_k^H a toward the target.

The chain is:

    fim_submatrix     7x7 information for one path
    efim_* helpers    reduce to the [theta_r, phi_r, tau] block
    crbs              invert the reduced information
    position_*        map (angles, delay) to a position and its Jacobian
    speb              squared position error bound and PEB
    kappa_threshold   invert the PEB formula for the required transmit gain
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import SPEED_OF_LIGHT, ArrayGeometry, Direction, SubcarrierGrid, steering_derivatives
from .channel import PathParams, SensingScene

__all__ = [
    "FimBundle",
    "GeomCoeffs",
    "PebRequirement",
    "beamforming_gains",
    "fim_submatrix",
    "fim_bundle",
    "efim",
    "efim_aoa_toa",
    "ad_ratio",
    "crbs",
    "crb_toa_equal_gain",
    "position_from_aoa_toa",
    "position_jacobian",
    "geometric_coeffs",
    "speb",
    "kappa_threshold",
]

_AOA_TOA = (0, 1, 4)  # indices of [theta_r, phi_r, tau] in xi


@dataclass(frozen=True)
class PebRequirement:
    """Sensing requirement handed to the waveform designers.

    Args:
        gamma: target position error bound in meters.
        targets: path indices of the targets of interest.
    """

    gamma: float
    targets: tuple = (1,)

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if len(self.targets) == 0:
            raise ValueError("need at least one target of interest")


@dataclass(frozen=True)
class GeomCoeffs:
    """Geometry coefficients of the closed-form position error bound.

    omega is the ellipse localization denominator c*tau - D sin(theta)sin(phi);
    o, p, q weight the AOA/AOA/TOA CRBs; upsilon = sqrt(q) is the delay
    sensitivity scale.
    """

    omega: float
    o: float
    p: float
    q: float
    upsilon: float


@dataclass(frozen=True)
class FimBundle:
    """7x7 path information plus the reusable transmit/receive products."""

    fim: np.ndarray
    gains: np.ndarray            # per-subcarrier a^H F_k F_k^H a
    snr_factor: float
    bdot_theta_sq: float         # bdot_theta^H bdot_theta
    bdot_phi_sq: float


def beamforming_gains(beamformers: np.ndarray, steer: np.ndarray) -> np.ndarray:
    """Per-subcarrier transmit gain toward one direction.

    Args:
        beamformers: (K, N_t, N_s) effective precoders.
        steer: length N_t unit steering vector.

    Returns:
        Real array of K gains ||F_k^H a||^2.
    """
    proj = np.einsum("kts,t->ks", beamformers.conj(), steer)
    return np.real(np.einsum("ks,ks->k", proj, proj.conj()))


def _receive_products(rx_geom: ArrayGeometry, arrival: Direction):
    b, bd_t, bd_p = steering_derivatives(rx_geom, arrival)
    return {
        "tt": complex(np.vdot(bd_t, bd_t)),
        "tp": complex(np.vdot(bd_t, bd_p)),
        "pp": complex(np.vdot(bd_p, bd_p)),
        "tb": complex(np.vdot(bd_t, b)),
        "pb": complex(np.vdot(bd_p, b)),
    }


def fim_submatrix(
    path: PathParams,
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    beamformers: np.ndarray,
) -> np.ndarray:
    """Fisher information of xi for one sensing path.

    Closed form obtained by differentiating the per-subcarrier mean
    sqrt(E0 N_t N_r) beta e^{-j 2 pi f_k tau} b a^H F_k and taking
    (2M / sigma^2) Re{ sum_k tr(d_j rho R_S d_i rho^H) } with R_S = I/N_s.
    The steering derivative convention (phase-slope times steering vector,
    true derivative = -j * dot) is folded into the signs below.

    Args:
        path: arrival/departure/delay/gain of the path.
        scene: link budget (supplies the SNR factor).
        grid: subcarrier layout.
        tx_geom: transmit array.
        rx_geom: sensing receive array.
        beamformers: (K, N_t, N_s) effective precoders.

    Returns:
        Symmetric positive semidefinite 7x7 matrix.
    """
    return fim_bundle(path, scene, grid, tx_geom, rx_geom, beamformers).fim


def fim_bundle(
    path: PathParams,
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    beamformers: np.ndarray,
) -> FimBundle:
    """fim_submatrix plus the cached intermediate products."""
    beamformers = np.asarray(beamformers, dtype=complex)
    if beamformers.ndim != 3:
        raise ValueError("beamformers must be (K, N_t, N_s)")
    K, n_tx, n_s = beamformers.shape
    if K != grid.num_subcarriers or n_tx != tx_geom.num_elements:
        raise ValueError("beamformer shape disagrees with grid/array")

    gamma = scene.snr_factor(tx_geom.num_elements, rx_geom.num_elements, n_s)
    a, ad_t, ad_p = steering_derivatives(tx_geom, path.departure)
    r = _receive_products(rx_geom, path.arrival)
    w = 2.0 * np.pi * grid.baseband_frequencies

    # Per-subcarrier projections of the transmit-side vectors onto F_k.
    u = np.einsum("kts,t->ks", beamformers.conj(), a)       # F_k^H a
    v = np.einsum("kts,t->ks", beamformers.conj(), ad_t)    # F_k^H adot_theta
    z = np.einsum("kts,t->ks", beamformers.conj(), ad_p)    # F_k^H adot_phi

    G = np.real(np.einsum("ks,ks->k", u, u.conj()))
    Sg = G.sum()
    Sfg = (w * G).sum()
    Sffg = (w ** 2 * G).sum()
    vu = np.einsum("ks,ks->k", v.conj(), u)                  # adot_t^H F F^H a
    zu = np.einsum("ks,ks->k", z.conj(), u)
    Sva, Swa = vu.sum(), zu.sum()
    Sfva, Sfwa = (w * vu).sum(), (w * zu).sum()
    Svv = np.einsum("ks,ks->", v.conj(), v)
    Szz = np.einsum("ks,ks->", z.conj(), z)
    Szv = np.einsum("ks,ks->", z.conj(), v)                  # adot_p^H F F^H adot_t

    b2 = abs(path.gain) ** 2
    bc = np.conj(path.gain)
    J = np.zeros((7, 7))

    def sym(i, j, val):
        J[i, j] = J[j, i] = gamma * np.real(val)

    sym(0, 0, b2 * r["tt"] * Sg)
    sym(0, 1, b2 * r["tp"] * Sg)
    sym(0, 2, -b2 * r["tb"] * Sva)
    sym(0, 3, -b2 * r["tb"] * Swa)
    sym(0, 4, b2 * r["tb"] * Sfg)
    sym(0, 5, 1j * bc * r["tb"] * Sg)
    sym(0, 6, -bc * r["tb"] * Sg)
    sym(1, 1, b2 * r["pp"] * Sg)
    sym(1, 2, -b2 * r["pb"] * Sva)
    sym(1, 3, -b2 * r["pb"] * Swa)
    sym(1, 4, b2 * r["pb"] * Sfg)
    sym(1, 5, 1j * bc * r["pb"] * Sg)
    sym(1, 6, -bc * r["pb"] * Sg)
    sym(2, 2, b2 * Svv)
    sym(2, 3, b2 * Szv)
    sym(2, 4, -b2 * np.conj(Sfva))
    sym(2, 5, -1j * bc * np.conj(Sva))
    sym(2, 6, bc * np.conj(Sva))
    sym(3, 3, b2 * Szz)
    sym(3, 4, -b2 * np.conj(Sfwa))
    sym(3, 5, -1j * bc * np.conj(Swa))
    sym(3, 6, bc * np.conj(Swa))
    sym(4, 4, b2 * Sffg)
    sym(4, 5, 1j * bc * Sfg)
    sym(4, 6, -bc * Sfg)
    sym(5, 5, Sg)
    sym(5, 6, 0.0)
    sym(6, 6, Sg)

    return FimBundle(J, G, float(gamma), float(np.real(r["tt"])), float(np.real(r["pp"])))


def efim(fim: np.ndarray, keep: tuple) -> np.ndarray:
    """Equivalent Fisher information for a parameter subset.

    Schur complement J_e = A - B A_d^{-1} B^T where A is the kept block and
    A_d the nuisance block.

    Args:
        fim: symmetric information matrix.
        keep: indices of the parameters of interest.

    Returns:
        len(keep) x len(keep) equivalent information matrix.

    Raises:
        np.linalg.LinAlgError: if the nuisance block is singular.
    """
    fim = np.asarray(fim, dtype=float)
    keep = tuple(keep)
    drop = tuple(i for i in range(fim.shape[0]) if i not in keep)
    A = fim[np.ix_(keep, keep)]
    if not drop:
        return A.copy()
    B = fim[np.ix_(keep, drop)]
    Ad = fim[np.ix_(drop, drop)]
    X = np.linalg.solve(Ad, B.T)
    out = A - B @ X
    return 0.5 * (out + out.T)


def efim_aoa_toa(fim: np.ndarray, method: str = "diagonal") -> np.ndarray:
    """Reduce the 7x7 path information to the [theta_r, phi_r, tau] block.

    method "diagonal" uses the decoupling of receive angles and delay from
    the nuisance parameters that holds for centered arrays
    (bdot^H b = 0), yielding diag(J_11, J_22, J_55). method "schur" computes
    the exact Schur complement against [theta_t, phi_t, beta_re, beta_im].

    Args:
        fim: 7x7 path information.
        method: "diagonal" or "schur".

    Returns:
        3x3 equivalent information for [theta_r, phi_r, tau].
    """
    fim = np.asarray(fim, dtype=float)
    if fim.shape != (7, 7):
        raise ValueError("expected the 7x7 path information")
    if method == "diagonal":
        return np.diag(np.diag(fim)[list(_AOA_TOA)])
    if method == "schur":
        return efim(fim, _AOA_TOA)
    raise ValueError(f"unknown method {method!r}")


def ad_ratio(rx_geom: ArrayGeometry, arrival: Direction) -> float:
    """Off-diagonal-to-diagonal ratio of the AOA information block.

    delta^2 = 2 bdot_theta^H bdot_phi / (bdot_theta^H bdot_theta +
    bdot_phi^H bdot_phi), evaluated with the coordinate-moment closed forms
    (valid for centered arrays with diagonal moment matrix, e.g. any USPA):

        bdot_t^H bdot_t = (4 pi^2 / (N lam^2)) (cos^2 t cos^2 p Sx
                          + cos^2 t sin^2 p Sy + sin^2 t Sz)
        bdot_p^H bdot_p = (4 pi^2 / (N lam^2)) (sin^2 t sin^2 p Sx
                          + sin^2 t cos^2 p Sy)
        bdot_t^H bdot_p = (4 pi^2 / (N lam^2)) sin t cos t sin p cos p (Sy - Sx)

    Small delta^2 justifies the diagonal EFIM used by the PEB closed form.
    """
    mom = rx_geom.moments
    cross = rx_geom.coords @ rx_geom.coords.T
    if np.abs(cross - np.diag(np.diag(cross))).max() > 1e-9 * (1.0 + cross.max()):
        raise ValueError("moment matrix is not diagonal for this array")
    sx, sy, sz = mom
    st, ct = np.sin(arrival.theta), np.cos(arrival.theta)
    sp, cp = np.sin(arrival.phi), np.cos(arrival.phi)
    scale = 4.0 * np.pi ** 2 / (rx_geom.num_elements * rx_geom.wavelength ** 2)
    num = scale * st * ct * sp * cp * (sy - sx)
    den_t = scale * (ct * ct * cp * cp * sx + ct * ct * sp * sp * sy + st * st * sz)
    den_p = scale * (st * st * sp * sp * sx + st * st * cp * cp * sy)
    den = den_t + den_p
    if den == 0.0:
        return 0.0
    return float(2.0 * num / den)


def crbs(efim3: np.ndarray) -> np.ndarray:
    """Cramer-Rao bounds from a diagonal 3x3 equivalent information.

    Args:
        efim3: equivalent information for [theta_r, phi_r, tau].

    Returns:
        [CRB_theta, CRB_phi, CRB_tau]; zero information maps to +inf rather
        than raising.
    """
    d = np.diag(np.asarray(efim3, dtype=float))
    with np.errstate(divide="ignore"):
        out = np.where(d > 0.0, 1.0 / np.where(d > 0.0, d, 1.0), np.inf)
    return out


def crb_toa_equal_gain(
    snr_factor: float,
    gain_beta_sq: float,
    grid: SubcarrierGrid,
    gain: float,
    large_k: bool = False,
) -> float:
    """Delay CRB when the transmit gain is the same on every subcarrier.

    Exact mode uses sum_k f_k^2 = Delta_f^2 K (K^2-1)/12; the large-K mode is
    the familiar 3 / (pi^2 gamma |beta|^2 B^2 K G). The two agree to a factor
    K^2 / (K^2 - 1).

    Args:
        snr_factor: gamma.
        gain_beta_sq: |beta|^2.
        grid: subcarrier layout.
        gain: common transmit gain G.
        large_k: use the bandwidth-only approximation.

    Returns:
        CRB of tau in s^2 (+inf when the denominator vanishes).
    """
    if large_k:
        den = (np.pi ** 2 / 3.0) * snr_factor * gain_beta_sq * grid.bandwidth ** 2 \
            * grid.num_subcarriers * gain
    else:
        den = 4.0 * np.pi ** 2 * snr_factor * gain_beta_sq * grid.sum_freq_squared * gain
    return float(1.0 / den) if den > 0.0 else np.inf


def position_from_aoa_toa(arrival: Direction, delay: float, baseline: float) -> np.ndarray:
    """Target position from arrival angles and bistatic delay.

    The delay fixes an ellipsoid with the two stations at its foci; the
    arrival direction picks the point on it:

        d = (c^2 tau^2 - D^2) / (2 (c tau - D sin(theta) sin(phi)))
        p = d [sin t cos p, sin t sin p, cos t]

    Args:
        arrival: AOA at the receiver (origin).
        delay: total delay tau in seconds.
        baseline: station separation D in meters.

    Returns:
        Position as a length-3 array (receiver frame).

    Raises:
        ValueError: if c tau <= D (delay shorter than the direct path) or the
            localization denominator vanishes.
    """
    ct = SPEED_OF_LIGHT * delay
    if ct <= baseline:
        raise ValueError("infeasible delay: c tau must exceed the baseline")
    omega = ct - baseline * np.sin(arrival.theta) * np.sin(arrival.phi)
    if omega <= 1e-12 * ct:
        raise ValueError("baseline singularity: target on the station axis")
    d = (ct ** 2 - baseline ** 2) / (2.0 * omega)
    return d * arrival.unit_vector()


def position_jacobian(arrival: Direction, delay: float, baseline: float) -> np.ndarray:
    """Jacobian of the recovered position w.r.t. (theta, phi, tau).

    Columns are d p / d theta, d p / d phi, d p / d tau. Matches central
    finite differences of position_from_aoa_toa.
    """
    ct = SPEED_OF_LIGHT * delay
    st, ctt = np.sin(arrival.theta), np.cos(arrival.theta)
    sp, cp = np.sin(arrival.phi), np.cos(arrival.phi)
    omega = ct - baseline * st * sp
    if ct <= baseline:
        raise ValueError("infeasible delay: c tau must exceed the baseline")
    if abs(omega) <= 1e-12 * ct:
        raise ValueError("baseline singularity: target on the station axis")
    A = ct ** 2 - baseline ** 2
    ups = SPEED_OF_LIGHT * (ct ** 2 - 2.0 * ct * baseline * st * sp + baseline ** 2)
    J = np.array(
        [
            [A * ct * ctt * cp, A * st * (baseline * st - ct * sp), ups * st * cp],
            [A * ct * ctt * sp, A * ct * st * cp, ups * st * sp],
            [A * (baseline * sp - ct * st), A * baseline * st * ctt * cp, ups * ctt],
        ]
    )
    return J / (2.0 * omega ** 2)


def geometric_coeffs(arrival: Direction, delay: float, baseline: float) -> GeomCoeffs:
    """Geometry weights (omega, o, p, q) of the closed-form SPEB.

    o, p, q are the squared Jacobian column norms scaled by (2 omega^2)^2:
    SPEB = (o CRB_theta + p CRB_phi + q CRB_tau) / (4 omega^4).
    """
    ct = SPEED_OF_LIGHT * delay
    st, ctt = np.sin(arrival.theta), np.cos(arrival.theta)
    sp, cp = np.sin(arrival.phi), np.cos(arrival.phi)
    omega = ct - baseline * st * sp
    A2 = (ct ** 2 - baseline ** 2) ** 2
    o = A2 * (ct ** 2 + baseline ** 2 * sp ** 2 - 2.0 * baseline * ct * st * sp)
    p = A2 * (
        baseline ** 2 * st ** 4
        - 2.0 * baseline * ct * st ** 3 * sp
        + ct ** 2 * st ** 2
        + baseline ** 2 * st ** 2 * ctt ** 2 * cp ** 2
    )
    ups = SPEED_OF_LIGHT * (ct ** 2 - 2.0 * ct * baseline * st * sp + baseline ** 2)
    return GeomCoeffs(float(omega), float(o), float(p), float(ups ** 2), float(ups))


def speb(
    path: PathParams,
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    beamformers: np.ndarray,
    method: str = "closed-form",
) -> tuple:
    """Squared position error bound and PEB for one path.

    method "closed-form" evaluates (o CRB_t + p CRB_p + q CRB_tau)/(4 omega^4)
    with the CRBs from the diagonal equivalent information; "trace" computes
    tr(Jac J_e^{-1} Jac^T) with the same diagonal J_e; "trace-full" uses the
    exact Schur-complement J_e (needs a beamformer that excites the
    departure derivatives, otherwise the nuisance block is singular).

    Args:
        path: sensing path (angles, delay, gain).
        scene: link budget and baseline.
        grid: subcarrier layout.
        tx_geom / rx_geom: arrays.
        beamformers: (K, N_t, N_s) effective precoders.
        method: "closed-form", "trace", or "trace-full".

    Returns:
        (speb_m2, peb_m): squared bound in m^2 and its square root. Singular
        geometry or zero information yields (inf, inf) rather than raising.
    """
    bundle = fim_bundle(path, scene, grid, tx_geom, rx_geom, beamformers)
    ct = SPEED_OF_LIGHT * path.delay
    st, sp = np.sin(path.arrival.theta), np.sin(path.arrival.phi)
    omega = ct - scene.baseline * st * sp
    if ct <= scene.baseline or abs(omega) <= 1e-12 * ct:
        return np.inf, np.inf

    if method == "closed-form":
        g = geometric_coeffs(path.arrival, path.delay, scene.baseline)
        c_theta, c_phi, c_tau = crbs(efim_aoa_toa(bundle.fim, "diagonal"))
        val = (g.o * c_theta + g.p * c_phi + g.q * c_tau) / (4.0 * g.omega ** 4)
    elif method in ("trace", "trace-full"):
        jac = position_jacobian(path.arrival, path.delay, scene.baseline)
        try:
            je = efim_aoa_toa(bundle.fim,
                              "diagonal" if method == "trace" else "schur")
        except np.linalg.LinAlgError:
            return np.inf, np.inf
        d = np.diag(je)
        if np.any(d <= 0.0):
            return np.inf, np.inf
        val = float(np.trace(jac @ np.linalg.solve(je, jac.T)))
    else:
        raise ValueError(f"unknown method {method!r}")

    if not np.isfinite(val) or val < 0.0:
        return np.inf, np.inf
    return float(val), float(np.sqrt(val))


def kappa_threshold(
    path: PathParams,
    scene: SensingScene,
    grid: SubcarrierGrid,
    tx_geom: ArrayGeometry,
    rx_geom: ArrayGeometry,
    num_streams: int,
    gamma_peb: float,
    large_k: bool = False,
) -> float:
    """Per-subcarrier transmit gain needed to meet a PEB target.

    Inverts the closed-form SPEB for the common gain G = a^H F_k F_k^H a:

        kappa = (o / r_tt + p / r_pp + q * T) / (4 omega^4 gamma |beta|^2 K Gamma^2)

    where r_tt, r_pp are the receive steering-derivative norms and T is
    K / (4 pi^2 sum_k f_k^2) exactly (default) or 3 / (pi^2 B^2) in the
    large-K mode. A beamformer achieving gain kappa on every subcarrier
    attains PEB = Gamma exactly in the default mode.

    Args:
        path: target path.
        scene: link budget.
        grid: subcarrier layout.
        tx_geom / rx_geom: arrays.
        num_streams: N_s used by the eventual waveform (enters gamma).
        gamma_peb: PEB target in meters.
        large_k: use the bandwidth-only TOA term.

    Returns:
        Required gain kappa (>= 0). Singular geometry returns +inf.
    """
    if gamma_peb <= 0.0:
        raise ValueError("gamma_peb must be positive")
    g = geometric_coeffs(path.arrival, path.delay, scene.baseline)
    ct = SPEED_OF_LIGHT * path.delay
    if ct <= scene.baseline or abs(g.omega) <= 1e-12 * ct:
        return np.inf

    r = _receive_products(rx_geom, path.arrival)
    r_tt, r_pp = np.real(r["tt"]), np.real(r["pp"])
    gamma = scene.snr_factor(tx_geom.num_elements, rx_geom.num_elements, num_streams)
    b2 = abs(path.gain) ** 2
    K = grid.num_subcarriers

    if large_k:
        toa_term = 3.0 / (np.pi ** 2 * grid.bandwidth ** 2)
    else:
        toa_term = K / (4.0 * np.pi ** 2 * grid.sum_freq_squared) if K > 1 else np.inf

    terms = 0.0
    for weight, der in ((g.o, r_tt), (g.p, r_pp)):
        if weight > 0.0:
            if der <= 0.0:
                return np.inf
            terms += weight / der
    if g.q > 0.0:
        if not np.isfinite(toa_term):
            return np.inf
        terms += g.q * toa_term

    return float(terms / (4.0 * g.omega ** 4 * gamma * b2 * K * gamma_peb ** 2))
